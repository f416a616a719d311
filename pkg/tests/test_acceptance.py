"""Acceptance suite: one test per release criterion.

Each test pins the criterion at its stated tolerance; the terminal summary
hook in conftest prints one PASS/FAIL line per criterion at the end of the
run.
"""
from __future__ import annotations

import json
import math
import random
import time

import numpy as np
import pytest
from click.testing import CliRunner

from malscan.cli import main as cli_main
from malscan.crag import GradedDocument
from malscan.describe import parse_description, render_description
from malscan.evalharness import confusion, metrics
from malscan.features import CODE_ORDER, FeatureCode, FeatureVector, extract_from_source
from malscan.kb.documents import KnowledgeDocument, SnippetRow, ingest_snippets
from malscan.kb.index import VectorIndex
from malscan.kb.yara import parse_yara, serialize_rule
from malscan.prompts import file_analysis_prompt, package_summary_prompt
from testutil import DATA, FIXTURES, GOLDENS, build_corpus20, render_messages, write_mock_config

LONG_LITERAL = "lorem ipsum dolor sit " * 5

# --------------------------------------------------------------------------
# Criterion 1: feature taxonomy — 16 canonical + 8 combined snippets match
# hand-derived expectations; the whole batch extracts in under a second.
# --------------------------------------------------------------------------

CANONICAL_SNIPPETS = [
    ("import os\n", {"R1"}),
    ("os.system('ls')\n", {"R2"}),
    ("import shutil\n", {"R3"}),
    ("open('notes.txt')\n", {"R4"}),
    ("path = '/etc/passwd'\n", {"R5"}),
    ("import socket\n", {"T1"}),
    ("socket.create_connection(('example', 80))\n", {"T2"}),
    ("url = 'http://example.com/x'\n", {"T3"}),
    ("import base64\n", {"E1"}),
    ("base64.b64encode(data)\n", {"E2"}),
    ("blob = 'aHR0cDovL2V4YW1wbGUuY29t'\n", {"E3"}),
    (f"banner = '{LONG_LITERAL}'\n", {"E4"}),
    ("import subprocess\n", {"P1"}),
    ("subprocess.run(['ls'])\n", {"P2"}),
    # the bash feature is defined over process-module calls, so its canonical
    # snippet necessarily carries P2 as well
    ("subprocess.run('bash -c true', shell=True)\n", {"P2", "P3"}),
    ("eval('1+1')\n", {"P4"}),
]

COMBINED_SNIPPETS = [
    ('import subprocess\nimport os\nsubprocess.Popen(["ls"])\n', {"P1", "R1", "P2"}),
    ("import os as o\no.system('id')\n", {"R1", "R2"}),
    ("from subprocess import Popen\nPopen(['true'])\n", {"P1", "P2"}),
    ("import urllib\nurllib.request.urlopen('https://example.net/p')\n", {"T1", "T2", "T3"}),
    (
        "import base64\npayload = 'aW1wb3J0IG9zOyBvcy5zeXN0ZW0oImxzIik='\n"
        "exec(base64.b64decode(payload))\n",
        {"E1", "E3", "P4", "E2"},
    ),
    ("import os\ntoken = os.environ.get('API_KEY')\n", {"R1", "R2", "R5"}),
    ("from subprocess import run\nrun('echo hi', shell=True)\n", {"P1", "P2", "P3"}),
    ("import shutil\nshutil.copy('/home/u/.ssh/id_rsa', '/tmp/x')\n", {"R3", "R4", "R5"}),
]


def test_feature_taxonomy_suite():
    started = time.perf_counter()
    for source, expected in CANONICAL_SNIPPETS + COMBINED_SNIPPETS:
        fv = extract_from_source(source)
        got = {code.value for code, on in fv.flags.items() if on}
        assert got == expected, f"snippet {source!r}: got {got}, expected {expected}"
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"24-snippet suite took {elapsed:.3f}s"


# --------------------------------------------------------------------------
# Criterion 2: description fidelity — reference sentence byte-for-byte, plus
# grammar round-trip over 1,000 random feature vectors.
# --------------------------------------------------------------------------

REFERENCE_SENTENCE = (
    "start entry selfedgamestudy-5.59/setup.py, import process module, "
    "import operating system module, use process module call, end of entry."
)


def test_description_fidelity():
    source = 'import subprocess\nimport os\nsubprocess.Popen(["ls"])\n'
    fv = extract_from_source(source)
    rendered = render_description("selfedgamestudy-5.59", "setup.py", fv).rendered
    assert rendered == REFERENCE_SENTENCE

    rng = random.Random(424242)
    for i in range(1000):
        codes = rng.sample(CODE_ORDER, k=rng.randint(0, 16))
        vector = FeatureVector({code: rng.randrange(100_000) for code in codes})
        desc = render_description(f"pkg-{i}", "src/mod.py", vector)
        entry_id, labels = parse_description(desc.rendered)
        assert entry_id == desc.entry_id
        assert labels == desc.labels


# --------------------------------------------------------------------------
# Criterion 3: prompt golden files, including two-decimal average rendering
# for 0, 33.3333, and 60.
# --------------------------------------------------------------------------

def test_prompt_golden_files():
    rendered = render_messages(file_analysis_prompt("setup.py", "print(1)"))
    assert rendered == (GOLDENS / "file_analysis_setup_py.txt").read_text()

    cases = [
        ((0, 0, 0.0, ""), "package_summary_avg_0.txt", "0.00"),
        ((1, 3, 33.3333, ""), "package_summary_avg_33.txt", "33.33"),
        ((2, 1, 60, "setup.py: malicious score=90"), "package_summary_avg_60.txt", "60.00"),
    ]
    for (mal, ben, avg, info), golden, cell in cases:
        rendered = render_messages(package_summary_prompt(mal, ben, avg, info))
        assert rendered == (GOLDENS / golden).read_text()
        assert f"Average Malicious Score: {cell}" in rendered


# --------------------------------------------------------------------------
# Criterion 4: retrieval equals a brute-force full-sort cosine oracle on 100
# random collections (sizes 1-200, d=32), including tie-break order.
# --------------------------------------------------------------------------

def test_retrieval_oracle():
    rng = np.random.default_rng(20240811)
    for trial in range(100):
        size = int(rng.integers(1, 201))
        index = VectorIndex(f"trial{trial}", 32)
        vectors: dict[str, np.ndarray] = {}
        for i in range(size):
            if i > 0 and rng.random() < 0.1:  # duplicates force score ties
                vec = vectors[f"doc{int(rng.integers(0, i)):03d}"].copy()
            else:
                vec = rng.standard_normal(32)
            doc_id = f"doc{i:03d}"
            vectors[doc_id] = vec
            index.add(KnowledgeDocument(id=doc_id, source="snippet", title=doc_id,
                                        body="b", embedding=vec))
        q = rng.standard_normal(32)
        k = int(rng.integers(1, 12))

        q_norm = float(np.linalg.norm(q))
        oracle = sorted(
            (
                (doc_id, float(np.dot(vec, q)) / (float(np.linalg.norm(vec)) * q_norm))
                for doc_id, vec in vectors.items()
            ),
            key=lambda item: (-item[1], item[0]),
        )[:k]
        assert index.query(q, k) == oracle, f"trial {trial} diverged from oracle"


# --------------------------------------------------------------------------
# Criterion 5: corrective-retrieval admission is monotone in the threshold
# over 500 random grade sets, and admitted documents are always a subset of
# the retrieved candidates.
# --------------------------------------------------------------------------

def _admit(grades: list[float], threshold: float) -> set[int]:
    docs = [
        GradedDocument(doc_id=f"d{i}", collection="c", retrieval_score=0.5,
                       relevance=g, admitted=g >= threshold)
        for i, g in enumerate(grades)
    ]
    return {i for i, d in enumerate(docs) if d.admitted}


def test_crag_monotonicity():
    rng = random.Random(99)
    for _ in range(500):
        grades = [rng.random() for _ in range(rng.randint(1, 20))]
        t1, t2 = sorted((rng.random(), rng.random()), reverse=True)  # t1 >= t2
        admitted_strict = _admit(grades, t1)
        admitted_loose = _admit(grades, t2)
        assert admitted_strict <= admitted_loose
        assert admitted_loose <= set(range(len(grades)))  # subset of candidates


# --------------------------------------------------------------------------
# Criterion 6: metrics oracle — 1,000 random prediction/label vectors
# (lengths 1-500) agree with an independent brute-force implementation to
# 1e-12; balanced accuracy equals the mean of per-class recalls identically.
# --------------------------------------------------------------------------

def _brute_force_metrics(preds: list[str], labels: list[int]) -> dict[str, float]:
    tp = sum(p == "malicious" and l == 1 for p, l in zip(preds, labels))
    fp = sum(p == "malicious" and l == 0 for p, l in zip(preds, labels))
    tn = sum(p == "benign" and l == 0 for p, l in zip(preds, labels))
    fn = sum(p == "benign" and l == 1 for p, l in zip(preds, labels))

    def div(a: int, b: int) -> float:
        return a / b if b else 0.0

    precision_mal = div(tp, tp + fp)
    recall_mal = div(tp, tp + fn)
    precision_ben = div(tn, tn + fn)
    recall_ben = div(tn, tn + fp)

    def f1(p: float, r: float) -> float:
        return 2 * p * r / (p + r) if p + r else 0.0

    return {
        "precision_malicious": precision_mal,
        "recall_malicious": recall_mal,
        "f1_malicious": f1(precision_mal, recall_mal),
        "precision_benign": precision_ben,
        "recall_benign": recall_ben,
        "f1_benign": f1(precision_ben, recall_ben),
        "accuracy": div(tp + tn, tp + tn + fp + fn),
        "balanced_accuracy": (recall_mal + recall_ben) / 2,
    }


def test_metrics_oracle():
    rng = random.Random(31337)
    for _ in range(1000):
        n = rng.randint(1, 500)
        preds = [rng.choice(["malicious", "benign", "error"]) for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        report = metrics(confusion(preds, labels))
        expected = _brute_force_metrics(preds, labels)
        for field, value in expected.items():
            assert math.isclose(getattr(report, field), value, abs_tol=1e-12), field
        assert report.balanced_accuracy == (report.recall_malicious + report.recall_benign) / 2


# --------------------------------------------------------------------------
# Criterion 7: every transcribed benchmark row is internally consistent,
# |printed F1 - 2PR/(P+R)| <= 0.015, except the one flagged known-bad row.
# --------------------------------------------------------------------------

def test_paper_table_consistency():
    rows = json.loads((DATA / "reference_metrics.json").read_text())["rows"]
    assert len(rows) == 14
    checked = 0
    for row in rows:
        if not row["consistent"]:
            continue  # documented known-bad row, excluded by design
        p, r = row["precision"], row["recall"]
        computed = 2 * p * r / (p + r)
        assert abs(row["f1"] - computed) <= 0.015, row
        checked += 1
    assert checked == 13


# --------------------------------------------------------------------------
# Criterion 8: end-to-end determinism — scanning a 20-package corpus with the
# scripted mock yields byte-identical reports across three runs and across
# --jobs 1 vs --jobs 8; the engineered confusion matrix (tp=5 fp=1 tn=13
# fn=1) produces precision=recall=0.833 and accuracy 0.90; all in under 10 s.
# --------------------------------------------------------------------------

def test_end_to_end_determinism(tmp_path):
    started = time.perf_counter()
    runner = CliRunner()
    corpus = build_corpus20(tmp_path)
    config = write_mock_config(tmp_path / "config.yaml")
    targets = sorted(str(p) for sub in ("malicious", "benign")
                     for p in (corpus / sub).iterdir())
    assert len(targets) == 20

    def run_scan(out_name: str, jobs: int) -> bytes:
        out = tmp_path / out_name
        result = runner.invoke(cli_main, [
            "scan", *targets, "--config", str(config), "--strategy", "rule",
            "--out", str(out), "--jobs", str(jobs),
        ])
        assert result.exit_code == 0, result.output
        return out.read_bytes()

    reports = [run_scan(f"report{i}.jsonl", jobs=1) for i in range(3)]
    assert reports[0] == reports[1] == reports[2]
    assert run_scan("report_parallel.jsonl", jobs=8) == reports[0]

    records = [json.loads(line) for line in reports[0].decode().splitlines()]
    preds = [r["outcome"] for r in records]
    labels = [1 if r["package"].startswith("mal") else 0 for r in records]
    cm = confusion(preds, labels)
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (5, 1, 13, 1)

    report = metrics(cm)
    assert round(report.precision_malicious, 3) == 0.833
    assert round(report.recall_malicious, 3) == 0.833
    assert report.accuracy == pytest.approx(0.90)

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"end-to-end run took {elapsed:.2f}s"


# --------------------------------------------------------------------------
# Criterion 9: the 25-rule fixture parses with zero errors and round-trips;
# a deliberately malformed rule yields exactly one error without aborting.
# --------------------------------------------------------------------------

def test_yara_parser():
    result = parse_yara((FIXTURES / "rules_25.yar").read_text())
    assert len(result.rules) == 25
    assert result.errors == []
    kinds = {s.kind for rule in result.rules for s in rule.strings}
    assert kinds == {"text", "hex", "regex"}
    assert any(rule.tags for rule in result.rules)
    assert any(rule.meta for rule in result.rules)
    for rule in result.rules:
        assert parse_yara(serialize_rule(rule)).rules == [rule]

    broken = parse_yara((FIXTURES / "rules_with_error.yar").read_text())
    assert [rule.identifier for rule in broken.rules] == ["good_rule"]
    assert len(broken.errors) == 1


# --------------------------------------------------------------------------
# Criterion 10: snippet exclusion reproduces the 1,134/24 split on a
# synthetic 1,158-snippet corpus with exactly 24 over the threshold.
# --------------------------------------------------------------------------

def test_snippet_exclusion():
    max_len = 20_000
    rows = []
    for i in range(1158):
        if i < 24:
            text = "x" * (max_len + 1 + i)  # over threshold
        else:
            text = f"from setuptools import setup\nsetup(name='p{i}')\n"
        rows.append(SnippetRow(f"pkg{i:04d}", text, 1))
    docs, excluded = ingest_snippets(rows, max_len=max_len)
    assert len(docs) == 1134
    assert len(excluded) == 24


# --------------------------------------------------------------------------
# Criterion 11: dataset preparation — partition and determinism properties
# over 200 random (n, seed) pairs; the manifest records the fine-tuning
# recipe verbatim.
# --------------------------------------------------------------------------

def test_dataset_prep():
    from malscan.describe import DatasetRow, build_dataset

    rng = random.Random(7331)
    for _ in range(200):
        n = rng.randint(1, 400)
        seed = rng.randrange(2**32)
        rows = [
            DatasetRow(f"start entry p/{i:03d}.py, end of entry.", rng.randint(0, 1))
            for i in range(n)
        ]
        train, val, test, manifest = build_dataset(rows, (0.8, 0.1, 0.1), seed)

        # partition: disjoint, union equals input, sizes within one of exact
        combined = [r.description for r in train + val + test]
        assert sorted(combined) == sorted(r.description for r in rows)
        assert len(combined) == len(set(combined)) == n
        for size, ratio in zip((len(train), len(val), len(test)), (0.8, 0.1, 0.1)):
            assert abs(size - n * ratio) <= 1.0

        # determinism: identical inputs and seed reproduce the exact splits
        again = build_dataset(list(reversed(rows)), (0.8, 0.1, 0.1), seed)
        assert (train, val, test) == again[:3]

        recipe = manifest["fine_tune"]
        assert recipe["learning_rate"] == "1e-4"
        assert recipe["batch_size"] == 1
        assert recipe["num_epochs"] == 1
