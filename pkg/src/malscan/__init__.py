"""malscan: static behavioral triage of PyPI package archives.

The pipeline loads a package, extracts sixteen behavioral features from each
Python file's syntax tree, renders them as canonical textual descriptions,
and classifies files and then the whole package through a chat-completion
provider, optionally augmented with graded retrieval from YARA-description,
advisory, and malicious-snippet knowledge bases. A deterministic mock
provider and offline embedder keep the whole thing testable without network
access.
"""

__version__ = "0.1.0"

from .features import FeatureCode, FeatureVector, SignatureManifest, default_manifest
from .ingest import FileEntry, IngestOptions, PackageRecord, load_package

__all__ = [
    "__version__",
    "FeatureCode",
    "FeatureVector",
    "SignatureManifest",
    "default_manifest",
    "FileEntry",
    "IngestOptions",
    "PackageRecord",
    "load_package",
]
