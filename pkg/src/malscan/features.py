"""Behavioral feature extraction over Python syntax trees.

Sixteen boolean flags across four behaviour families: operating-system and
file-system access plus sensitive reads (R1-R5), networking (T1-T3), encoding
and suspicious literals (E1-E4), and process/eval activity (P1-P4). A feature
is sticky: once any statement in the file triggers it, it stays set (union
semantics), and the byte offset of the first trigger is kept so downstream
renderers can order features by first occurrence in source.

Which module names count for which family lives in a SignatureManifest so the
signature set is auditable and swappable rather than baked into code.
"""
from __future__ import annotations

import ast
import base64
import binascii
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import yaml


class ParseFailure(Exception):
    """Source could not be parsed; the file is skipped and counted upstream."""


class FeatureCode(str, Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"
    R4 = "R4"
    R5 = "R5"
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"
    E4 = "E4"
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"


CODE_ORDER: tuple[FeatureCode, ...] = tuple(FeatureCode)
_CODE_RANK = {code: i for i, code in enumerate(CODE_ORDER)}

# builtins that evaluate code at run time (P4)
_RUNTIME_EVAL_NAMES = frozenset({"eval", "exec", "compile", "__import__"})

_SHELL_ARG_MARKERS = ("bash", "sh -c")


@dataclass(frozen=True)
class SignatureManifest:
    """Module-name sets and literal thresholds driving feature detection."""

    os_modules: frozenset[str]
    filesystem_modules: frozenset[str]
    network_modules: frozenset[str]
    encoding_modules: frozenset[str]
    process_modules: frozenset[str]
    sensitive_paths: tuple[str, ...]
    url_pattern: str = r"(?i)\b(?:https?|ftp)://"
    base64_min_len: int = 16
    long_string_min_len: int = 100

    def __post_init__(self) -> None:
        for name in ("os_modules", "filesystem_modules", "network_modules",
                     "encoding_modules", "process_modules"):
            if not getattr(self, name):
                raise ValueError(f"manifest set {name} must be non-empty")
        if not self.sensitive_paths:
            raise ValueError("manifest sensitive_paths must be non-empty")
        if self.base64_min_len <= 0 or self.long_string_min_len <= 0:
            raise ValueError("manifest thresholds must be positive")
        re.compile(self.url_pattern)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SignatureManifest":
        kwargs = dict(data)
        for name in ("os_modules", "filesystem_modules", "network_modules",
                     "encoding_modules", "process_modules"):
            kwargs[name] = frozenset(kwargs.get(name, ()))
        kwargs["sensitive_paths"] = tuple(kwargs.get("sensitive_paths", ()))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SignatureManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    def import_code_for(self, top_module: str) -> FeatureCode | None:
        if top_module in self.os_modules:
            return FeatureCode.R1
        if top_module in self.filesystem_modules:
            return FeatureCode.R3
        if top_module in self.network_modules:
            return FeatureCode.T1
        if top_module in self.encoding_modules:
            return FeatureCode.E1
        if top_module in self.process_modules:
            return FeatureCode.P1
        return None


# import-category code -> matching call-usage code
_CALL_CODE = {
    FeatureCode.R1: FeatureCode.R2,
    FeatureCode.R3: FeatureCode.R4,
    FeatureCode.T1: FeatureCode.T2,
    FeatureCode.E1: FeatureCode.E2,
    FeatureCode.P1: FeatureCode.P2,
}


@lru_cache(maxsize=1)
def default_manifest() -> SignatureManifest:
    text = resources.files("malscan.data").joinpath("signatures.yaml").read_text("utf-8")
    return SignatureManifest.from_mapping(yaml.safe_load(text))


@dataclass(frozen=True)
class FeatureVector:
    """Triggered feature codes with the byte offset of each first trigger."""

    first_offsets: Mapping[FeatureCode, int]

    def __post_init__(self) -> None:
        for code, offset in self.first_offsets.items():
            if not isinstance(code, FeatureCode):
                raise TypeError(f"bad feature code: {code!r}")
            if offset < 0:
                raise ValueError(f"negative offset for {code}: {offset}")

    @property
    def flags(self) -> dict[FeatureCode, bool]:
        return {code: code in self.first_offsets for code in CODE_ORDER}

    def codes_in_source_order(self) -> list[FeatureCode]:
        """Codes ordered by first trigger offset; ties fall back to code order."""
        return sorted(self.first_offsets, key=lambda c: (self.first_offsets[c], _CODE_RANK[c]))

    def __bool__(self) -> bool:
        return bool(self.first_offsets)


def parse_source(source: str) -> ast.Module:
    """Parse decoded source into a tree, or raise ParseFailure.

    Syntax errors, stray control bytes, and null bytes all land here; callers
    count the file as unprocessable instead of aborting the package.
    """
    try:
        return ast.parse(source)
    except (SyntaxError, ValueError, MemoryError, RecursionError) as err:
        raise ParseFailure(str(err)) from err


def classify_module(name: str, manifest: SignatureManifest) -> FeatureCode | None:
    """Import-category code (R1/R3/T1/E1/P1) for a dotted module name, if any."""
    if not name:
        raise ValueError("module name must be non-empty")
    return manifest.import_code_for(name.split(".")[0])


def _line_start_byte_offsets(source: str) -> list[int]:
    data = source.encode("utf-8")
    starts = [0]
    for i, b in enumerate(data):
        if b == 0x0A:
            starts.append(i + 1)
    return starts


_ENV_MEMBERS = ("environ", "environb", "getenv")


class _Extractor(ast.NodeVisitor):
    def __init__(self, source: str, manifest: SignatureManifest) -> None:
        self.manifest = manifest
        self.line_starts = _line_start_byte_offsets(source)
        self.offsets: dict[FeatureCode, int] = {}
        # `import x [as y]` bindings: local name -> top-level module
        self.module_alias: dict[str, str] = {}
        # `from x import y [as z]` bindings: local name -> (top module, member)
        self.from_origin: dict[str, tuple[str, str]] = {}
        self.url_re = re.compile(manifest.url_pattern)
        self.base64_re = re.compile(r"[A-Za-z0-9+/]+={0,2}")

    # -- bookkeeping ------------------------------------------------------

    def _offset(self, node: ast.AST) -> int:
        # col_offset is already a UTF-8 byte offset within the line
        return self.line_starts[node.lineno - 1] + node.col_offset

    def _trigger(self, code: FeatureCode, node: ast.AST) -> None:
        offset = self._offset(node)
        prev = self.offsets.get(code)
        if prev is None or offset < prev:
            self.offsets[code] = offset

    def _resolve_target(self, base: str, chain: list[str]) -> tuple[str, list[str]] | None:
        """(top module, member path below it) for a dotted reference.

        A bare name that matches a known module resolves to itself, so
        ``os.system(...)`` counts even when the import is hidden behind
        try/except or a star-import.
        """
        if base in self.module_alias:
            return self.module_alias[base], chain
        if base in self.from_origin:
            top, member = self.from_origin[base]
            return top, [member, *chain]
        if self.manifest.import_code_for(base) is not None or base == "getpass":
            return base, chain
        return None

    # -- imports ----------------------------------------------------------

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            top = alias.name.split(".")[0]
            code = self.manifest.import_code_for(top)
            if code is not None:
                self._trigger(code, node)
            self.module_alias[alias.asname or top] = top
        self.generic_visit(node)

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        if node.module and node.level == 0:
            top = node.module.split(".")[0]
            code = self.manifest.import_code_for(top)
            if code is not None:
                self._trigger(code, node)
            for alias in node.names:
                if alias.name != "*":
                    self.from_origin[alias.asname or alias.name] = (top, alias.name)
        self.generic_visit(node)

    # -- calls --------------------------------------------------------------

    def _callee_parts(self, func: ast.expr) -> tuple[str | None, list[str]]:
        """(base name, attribute chain) for Name/Attribute callees, else (None, [])."""
        chain: list[str] = []
        node = func
        while isinstance(node, ast.Attribute):
            chain.append(node.attr)
            node = node.value
        if isinstance(node, ast.Name):
            return node.id, list(reversed(chain))
        return None, []

    def _literal_strings(self, node: ast.expr, depth: int = 0) -> Iterable[str]:
        # one literal level: direct strings plus elements of list/tuple/set literals
        if isinstance(node, ast.Constant) and isinstance(node.value, str):
            yield node.value
        elif depth == 0 and isinstance(node, (ast.List, ast.Tuple, ast.Set)):
            for element in node.elts:
                yield from self._literal_strings(element, depth=1)

    def _call_uses_shell(self, node: ast.Call) -> bool:
        for arg in node.args:
            for text in self._literal_strings(arg):
                if any(marker in text for marker in _SHELL_ARG_MARKERS):
                    return True
        for kw in node.keywords:
            if kw.arg == "shell" and isinstance(kw.value, ast.Constant) and kw.value.value is True:
                return True
            for text in self._literal_strings(kw.value):
                if any(marker in text for marker in _SHELL_ARG_MARKERS):
                    return True
        return False

    def visit_Call(self, node: ast.Call) -> None:
        base, chain = self._callee_parts(node.func)
        if base is not None:
            self._classify_call(node, base, chain)
        self.generic_visit(node)

    def _classify_call(self, node: ast.Call, base: str, chain: list[str]) -> None:
        unbound = base not in self.module_alias and base not in self.from_origin
        if not chain and unbound:
            if base in _RUNTIME_EVAL_NAMES:
                self._trigger(FeatureCode.P4, node)
                return
            if base == "open":
                self._trigger(FeatureCode.R4, node)
                return
        resolved = self._resolve_target(base, chain)
        if resolved is None:
            return
        top, path = resolved
        if top == "getpass":
            self._trigger(FeatureCode.R5, node)
            return
        import_code = self.manifest.import_code_for(top)
        if import_code is None:
            return
        call_code = _CALL_CODE[import_code]
        self._trigger(call_code, node)
        if import_code is FeatureCode.R1 and path and path[0] in _ENV_MEMBERS:
            self._trigger(FeatureCode.R5, node)
        if call_code is FeatureCode.P2 and self._call_uses_shell(node):
            self._trigger(FeatureCode.P3, node)

    # -- non-call access to environment mappings ----------------------------

    def visit_Attribute(self, node: ast.Attribute) -> None:
        if node.attr in ("environ", "environb") and isinstance(node.value, ast.Name):
            resolved = self._resolve_target(node.value.id, [node.attr])
            if resolved is not None and resolved[0] in self.manifest.os_modules:
                self._trigger(FeatureCode.R5, node)
        self.generic_visit(node)

    def visit_Name(self, node: ast.Name) -> None:
        origin = self.from_origin.get(node.id)
        if origin is not None and origin[0] in self.manifest.os_modules \
                and origin[1] in ("environ", "environb"):
            self._trigger(FeatureCode.R5, node)
        self.generic_visit(node)

    # -- literals ------------------------------------------------------------

    def _looks_like_base64(self, text: str) -> bool:
        if len(text) < self.manifest.base64_min_len or len(text) % 4 != 0:
            return False
        if not self.base64_re.fullmatch(text):
            return False
        try:
            base64.b64decode(text, validate=True)
        except (binascii.Error, ValueError):
            return False
        return True

    def visit_Constant(self, node: ast.Constant) -> None:
        value = node.value
        if isinstance(value, bytes):
            try:
                value = value.decode("utf-8")
            except UnicodeDecodeError:
                return
        if not isinstance(value, str):
            return
        if self.url_re.search(value):
            self._trigger(FeatureCode.T3, node)
        if self._looks_like_base64(value):
            self._trigger(FeatureCode.E3, node)
        if len(value) >= self.manifest.long_string_min_len:
            self._trigger(FeatureCode.E4, node)
        if any(marker in value for marker in self.manifest.sensitive_paths):
            self._trigger(FeatureCode.R5, node)


def extract_features(
    tree: ast.Module,
    source: str,
    manifest: SignatureManifest | None = None,
) -> FeatureVector:
    """Walk a parsed tree and return the triggered feature codes.

    Extraction is total on a valid tree, deterministic, and monotone: adding
    statements can only flip flags false-to-true. Dynamic indirections
    (getattr-by-string, decoded payloads) are not chased beyond one literal
    level.
    """
    extractor = _Extractor(source, manifest or default_manifest())
    extractor.visit(tree)
    return FeatureVector(dict(extractor.offsets))


def extract_from_source(source: str, manifest: SignatureManifest | None = None) -> FeatureVector:
    """Convenience wrapper: parse then extract."""
    return extract_features(parse_source(source), source, manifest)
