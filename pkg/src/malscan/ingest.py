"""Package intake: turn a directory or sdist/wheel archive into an immutable file inventory.

Archives are extracted into a sandbox directory with traversal-unsafe members
rejected. Nothing in the package is ever executed; nested archives are listed
as opaque files rather than recursively unpacked.
"""
from __future__ import annotations

import codecs
import tarfile
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath


class IngestError(Exception):
    """Base class for package-loading failures."""


class UnreadableArchive(IngestError):
    """Corrupt or unsupported container."""


class PathTraversal(IngestError):
    """An archive member would escape the extraction root."""


class EmptyPackage(IngestError):
    """The package contains no regular files."""


DEFAULT_SNIPPET_BUDGET = 300

_TAR_SUFFIXES = (".tar.gz", ".tgz", ".tar")
_ZIP_SUFFIXES = (".zip", ".whl")


@dataclass(frozen=True)
class IngestOptions:
    """Knobs for package loading.

    workdir: sandbox directory for archive extraction (temp dir when unset,
    config key ``ingest.workdir``).
    """

    workdir: Path | None = None
    snippet_budget: int = DEFAULT_SNIPPET_BUDGET


@dataclass(frozen=True)
class FileEntry:
    """One regular file inside a package.

    ``rel_path`` is POSIX-style relative to the package root and never
    absolute or parent-escaping. ``content`` decodes lazily with lossy
    replacement so undecodable bytes never discard a package.
    """

    rel_path: str
    size_bytes: int
    is_python: bool
    abs_path: Path = field(repr=False, compare=False)

    @property
    def content(self) -> str:
        return self.abs_path.read_bytes().decode("utf-8", errors="replace")


@dataclass(frozen=True)
class PackageRecord:
    """A loaded package: name, sorted file inventory, and setup.py snippet."""

    name: str
    root: Path = field(compare=False)
    files: tuple[FileEntry, ...]
    setup_snippet: str | None
    label: int | None = None

    def __post_init__(self) -> None:
        if not self.name or "/" in self.name or "\\" in self.name:
            raise ValueError(f"invalid package name: {self.name!r}")
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0, 1, or None, got {self.label!r}")

    def with_label(self, label: int) -> "PackageRecord":
        return PackageRecord(self.name, self.root, self.files, self.setup_snippet, label)


def _validate_member_path(name: str) -> None:
    p = PurePosixPath(name.replace("\\", "/"))
    if p.is_absolute() or name.startswith("/"):
        raise PathTraversal(f"absolute archive member: {name!r}")
    if ".." in p.parts:
        raise PathTraversal(f"parent-escaping archive member: {name!r}")


def _extract_tar(archive: Path, dest: Path) -> None:
    try:
        with tarfile.open(archive, "r:*") as tf:
            for member in tf.getmembers():
                _validate_member_path(member.name)
                if not member.isreg():
                    continue  # directories implied; links/devices never materialized
                target = dest / PurePosixPath(member.name)
                target.parent.mkdir(parents=True, exist_ok=True)
                src = tf.extractfile(member)
                if src is None:
                    continue
                with src:
                    target.write_bytes(src.read())
    except PathTraversal:
        raise
    except (tarfile.TarError, EOFError, OSError) as err:
        raise UnreadableArchive(f"cannot read tar archive {archive}: {err}") from err


def _extract_zip(archive: Path, dest: Path) -> None:
    try:
        with zipfile.ZipFile(archive) as zf:
            for info in zf.infolist():
                if info.is_dir():
                    continue
                _validate_member_path(info.filename)
                target = dest / PurePosixPath(info.filename)
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(zf.read(info))
    except PathTraversal:
        raise
    except (zipfile.BadZipFile, OSError) as err:
        raise UnreadableArchive(f"cannot read zip archive {archive}: {err}") from err


def _archive_stem(path: Path) -> str:
    name = path.name
    for suffix in (".tar.gz", ".tgz", ".tar", ".zip", ".whl"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _enumerate(root: Path) -> list[tuple[str, Path]]:
    out = []
    for p in root.rglob("*"):
        if p.is_file() and not p.is_symlink():
            out.append((p.relative_to(root).as_posix(), p))
    out.sort(key=lambda item: item[0])
    return out


def load_package(path: str | Path, opts: IngestOptions = IngestOptions()) -> PackageRecord:
    """Load a directory, .tar.gz, .zip, or .whl into a PackageRecord.

    Archive members are extracted into a sandbox directory; members with
    absolute or parent-escaping paths raise PathTraversal. When every member
    lives under a single top-level directory that directory becomes the
    package name and root, otherwise the archive stem is used.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableArchive(f"no such path: {path}")

    if path.is_dir():
        root = path
        name = path.name
    else:
        lower = path.name.lower()
        dest = Path(tempfile.mkdtemp(prefix=_archive_stem(path) + "-", dir=opts.workdir))
        if lower.endswith(_TAR_SUFFIXES):
            _extract_tar(path, dest)
        elif lower.endswith(_ZIP_SUFFIXES):
            _extract_zip(path, dest)
        else:
            raise UnreadableArchive(f"unsupported container: {path.name}")
        top = [p for p in dest.iterdir()]
        if len(top) == 1 and top[0].is_dir():
            root = top[0]
            name = top[0].name
        else:
            root = dest
            name = _archive_stem(path)

    listing = _enumerate(root)
    if not listing:
        raise EmptyPackage(f"no regular files in {path}")

    files = tuple(
        FileEntry(
            rel_path=rel,
            size_bytes=abs_path.stat().st_size,
            is_python=rel.endswith(".py"),
            abs_path=abs_path,
        )
        for rel, abs_path in listing
    )
    record = PackageRecord(name=name, root=root, files=files, setup_snippet=None)
    snippet = extract_setup_snippet(record, opts.snippet_budget)
    return PackageRecord(name=name, root=root, files=files, setup_snippet=snippet)


def extract_setup_snippet(record: PackageRecord, budget: int) -> str | None:
    """First ``budget`` bytes of the lexicographically first setup.py, decoded.

    Decoding is lossy, but the cut never lands inside a multi-byte sequence:
    an incomplete trailing sequence is dropped rather than replaced. Returns
    None when the package has no setup.py at any depth.
    """
    if budget <= 0:
        raise ValueError("snippet budget must be positive")
    for entry in record.files:  # files are sorted, first hit wins
        if PurePosixPath(entry.rel_path).name == "setup.py":
            data = entry.abs_path.read_bytes()
            if len(data) <= budget:
                return data.decode("utf-8", errors="replace")
            decoder = codecs.getincrementaldecoder("utf-8")(errors="replace")
            return decoder.decode(data[:budget], final=False)
    return None
