from __future__ import annotations

import pytest


@pytest.fixture
def fixture_package(tmp_path):
    """Directory package with setup.py, pkg/__init__.py, README.md."""
    pkg = tmp_path / "demo-1.0"
    (pkg / "pkg").mkdir(parents=True)
    (pkg / "setup.py").write_text("from setuptools import setup\nsetup(name='demo')\n")
    (pkg / "pkg" / "__init__.py").write_text("VERSION = '1.0'\n")
    (pkg / "README.md").write_text("demo package\n")
    return pkg


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    results: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            when = getattr(rep, "when", "call")
            if when == "call" or status in ("failed", "error"):
                name = nodeid.split("::")[-1]
                if status != "passed":
                    results[name] = "FAIL"
                else:
                    results.setdefault(name, "PASS")
    if results:
        terminalreporter.section("acceptance criteria")
        for name in sorted(results):
            terminalreporter.write_line(f"{results[name]}  {name}")
