"""Render feature vectors as canonical sentences and prepare labeled splits.

Every analyzed file becomes one sentence of the form
``start entry <package>/<path>, <label>, <label>, end of entry.`` where the
labels are the descriptive names of the triggered features, ordered by first
occurrence in the source. These sentences are the classifier-facing encoding
of a file's behaviour and the rows of the fine-tuning datasets.
"""
from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .features import CODE_ORDER, FeatureCode, FeatureVector


class DescribeError(Exception):
    pass


class EmptyDataset(DescribeError):
    pass


class BadRatios(DescribeError):
    pass


class DescriptionSyntaxError(DescribeError):
    """Text does not match the description grammar."""


FEATURE_LABELS: dict[FeatureCode, str] = {
    FeatureCode.R1: "import operating system module",
    FeatureCode.R2: "use operating system module call",
    FeatureCode.R3: "import file system module",
    FeatureCode.R4: "use file system module file",
    FeatureCode.R5: "read sensitive information",
    FeatureCode.T1: "import network module",
    FeatureCode.T2: "use network module call",
    FeatureCode.T3: "use URL",
    FeatureCode.E1: "import encoding module",
    FeatureCode.E2: "use encoding module call",
    FeatureCode.E3: "use base64 string",
    FeatureCode.E4: "use long string",
    FeatureCode.P1: "import process module",
    FeatureCode.P2: "use process module call",
    FeatureCode.P3: "use bash script",
    FeatureCode.P4: "evaluate code at run-time",
}

LABEL_TO_CODE = {label: code for code, label in FEATURE_LABELS.items()}

_PREFIX = "start entry "
_SUFFIX = ", end of entry."

# Recorded for downstream fine-tuning; training itself is out of scope here.
FINE_TUNE_DEFAULTS = {
    "learning_rate": "1e-4",
    "batch_size": 1,
    "num_epochs": 1,
    "objective": "cross-entropy",
    "head": "linear-binary",
}


@dataclass(frozen=True)
class TextualDescription:
    entry_id: str
    labels: tuple[str, ...]
    rendered: str


@dataclass(frozen=True)
class DatasetRow:
    description: str
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def render_description(package_name: str, rel_path: str, fv: FeatureVector) -> TextualDescription:
    """Canonical sentence for one file, labels ordered by first source offset."""
    if not rel_path:
        raise ValueError("rel_path must be non-empty")
    entry_id = f"{package_name}/{rel_path}"
    labels = tuple(FEATURE_LABELS[code] for code in fv.codes_in_source_order())
    body = "".join(f", {label}" for label in labels)
    return TextualDescription(entry_id, labels, f"{_PREFIX}{entry_id}{body}{_SUFFIX}")


def parse_description(text: str) -> tuple[str, tuple[str, ...]]:
    """Invert render_description: recover (entry_id, labels) or fail.

    Labels are peeled off the right-hand side, so entry ids containing commas
    survive as long as they do not themselves end in a feature label.
    """
    if not text.startswith(_PREFIX) or not text.endswith(_SUFFIX):
        raise DescriptionSyntaxError(f"not a description sentence: {text!r}")
    middle = text[len(_PREFIX): -len(_SUFFIX)]
    tokens = middle.split(", ")
    labels: list[str] = []
    while len(tokens) > 1 and tokens[-1] in LABEL_TO_CODE:
        labels.append(tokens.pop())
    entry_id = ", ".join(tokens)
    if not entry_id:
        raise DescriptionSyntaxError(f"empty entry id in {text!r}")
    return entry_id, tuple(reversed(labels))


def _split_sizes(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # largest-remainder assignment; remainder ties resolved in split order
    exact = [n * r for r in ratios]
    sizes = [math.floor(x) for x in exact]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def build_dataset(
    rows: list[DatasetRow],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[DatasetRow], list[DatasetRow], list[DatasetRow], dict]:
    """Deterministic shuffle + three-way split with a reproducibility manifest.

    Splits are disjoint, their union is the input, and each size is within one
    row of the exact ratio. Rows are sorted before shuffling so the outcome is
    independent of the order in which they were produced.
    """
    if not rows:
        raise EmptyDataset("no rows to split")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be positive and sum to 1: {ratios!r}")

    shuffled = sorted(rows, key=lambda r: (r.description, r.label))
    random.Random(seed).shuffle(shuffled)

    n_train, n_val, n_test = _split_sizes(len(shuffled), tuple(ratios))
    train = shuffled[:n_train]
    val = shuffled[n_train: n_train + n_val]
    test = shuffled[n_train + n_val:]

    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "counts": {
            "train": len(train),
            "val": len(val),
            "test": len(test),
            "total": len(shuffled),
        },
        "fine_tune": dict(FINE_TUNE_DEFAULTS),
    }
    return train, val, test, manifest


def write_csv(rows: list[DatasetRow], path: str | Path) -> None:
    """CSV with header ``description,label``; descriptions quoted."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("description,label\r\n")
        writer = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC)
        for row in rows:
            writer.writerow([row.description, row.label])


def read_csv(path: str | Path) -> list[DatasetRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["description", "label"]:
            raise DescribeError(f"unexpected dataset header in {path}: {header!r}")
        return [DatasetRow(desc, int(float(label))) for desc, label in reader]


def write_dataset(
    rows: list[DatasetRow],
    out_dir: str | Path,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict:
    """Write train.csv / val.csv / test.csv plus manifest.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, val, test, manifest = build_dataset(rows, ratios, seed)
    write_csv(train, out_dir / "train.csv")
    write_csv(val, out_dir / "val.csv")
    write_csv(test, out_dir / "test.csv")
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
