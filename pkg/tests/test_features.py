from __future__ import annotations

import base64

import pytest
from hypothesis import given, strategies as st

from malscan.features import (
    CODE_ORDER,
    FeatureCode,
    FeatureVector,
    ParseFailure,
    SignatureManifest,
    classify_module,
    default_manifest,
    extract_features,
    extract_from_source,
    parse_source,
)

LONG_LITERAL = "lorem ipsum dolor sit " * 5  # 110 chars, spaces break the base64 charset

CANONICAL = {
    FeatureCode.R1: ("import os\n", {FeatureCode.R1}),
    FeatureCode.R2: ("os.system('ls')\n", {FeatureCode.R2}),
    FeatureCode.R3: ("import shutil\n", {FeatureCode.R3}),
    FeatureCode.R4: ("open('notes.txt')\n", {FeatureCode.R4}),
    FeatureCode.R5: ("path = '/etc/passwd'\n", {FeatureCode.R5}),
    FeatureCode.T1: ("import socket\n", {FeatureCode.T1}),
    FeatureCode.T2: ("socket.create_connection(('example', 80))\n", {FeatureCode.T2}),
    FeatureCode.T3: ("url = 'http://example.com/x'\n", {FeatureCode.T3}),
    FeatureCode.E1: ("import base64\n", {FeatureCode.E1}),
    FeatureCode.E2: ("base64.b64encode(data)\n", {FeatureCode.E2}),
    FeatureCode.E3: ("blob = 'aHR0cDovL2V4YW1wbGUuY29t'\n", {FeatureCode.E3}),
    FeatureCode.E4: (f"banner = '{LONG_LITERAL}'\n", {FeatureCode.E4}),
    FeatureCode.P1: ("import subprocess\n", {FeatureCode.P1}),
    FeatureCode.P2: ("subprocess.run(['ls'])\n", {FeatureCode.P2}),
    # P3 cannot fire without P2: its trigger is by definition a P2 call
    FeatureCode.P3: ("subprocess.run('bash -c true', shell=True)\n",
                     {FeatureCode.P2, FeatureCode.P3}),
    FeatureCode.P4: ("eval('1+1')\n", {FeatureCode.P4}),
}


def triggered(source: str) -> set[FeatureCode]:
    return {code for code, on in extract_from_source(source).flags.items() if on}


@pytest.mark.parametrize("code", list(CANONICAL))
def test_canonical_snippets(code):
    source, expected = CANONICAL[code]
    assert triggered(source) == expected


def test_paper_style_example_offsets_ordered():
    source = 'import subprocess\nimport os\nsubprocess.Popen(["ls"])\n'
    fv = extract_from_source(source)
    offsets = fv.first_offsets
    assert set(offsets) == {FeatureCode.P1, FeatureCode.R1, FeatureCode.P2}
    assert offsets[FeatureCode.P1] < offsets[FeatureCode.R1] < offsets[FeatureCode.P2]
    assert fv.codes_in_source_order() == [FeatureCode.P1, FeatureCode.R1, FeatureCode.P2]


def test_empty_module_has_no_flags():
    fv = extract_from_source("")
    assert not any(fv.flags.values())
    assert fv.codes_in_source_order() == []


def test_eval_alone_is_only_p4():
    assert triggered("eval('1+1')\n") == {FeatureCode.P4}


def test_base64_literal_verified_with_independent_decoder():
    literal = "aHR0cDovL2V4YW1wbGUuY29t"
    assert base64.b64decode(literal)  # independent confirmation it is valid base64
    assert len(literal) >= 16 and len(literal) % 4 == 0
    assert triggered(f"x = '{literal}'\n") == {FeatureCode.E3}


def test_invalid_base64_not_flagged():
    # right charset and length, wrong padding placement
    assert FeatureCode.E3 not in triggered("x = 'aaaa=aaa_aaaaaaaa'\n")
    # too short
    assert FeatureCode.E3 not in triggered("x = 'aGVsbG8='\n")


def test_alias_insensitive_import_and_call():
    assert triggered("import os as o\no.system('id')\n") == {FeatureCode.R1, FeatureCode.R2}


def test_from_import_tracks_member():
    assert triggered("from subprocess import Popen\nPopen(['true'])\n") == {
        FeatureCode.P1,
        FeatureCode.P2,
    }


def test_from_import_alias():
    got = triggered("from subprocess import Popen as P\nP('bash -c id')\n")
    assert got == {FeatureCode.P1, FeatureCode.P2, FeatureCode.P3}


def test_environment_access_is_sensitive_read():
    assert triggered("import os\nos.environ.get('TOKEN')\n") == {
        FeatureCode.R1,
        FeatureCode.R2,
        FeatureCode.R5,
    }
    assert triggered("import os\nx = os.environ['PATH']\n") == {FeatureCode.R1, FeatureCode.R5}
    assert triggered("from os import environ\nx = environ['PATH']\n") == {
        FeatureCode.R1,
        FeatureCode.R5,
    }


def test_getpass_call_is_sensitive_read():
    assert triggered("import getpass\npw = getpass.getpass()\n") == {FeatureCode.R5}


def test_shell_keyword_triggers_bash_feature():
    got = triggered("import subprocess\nsubprocess.run('echo hi', shell=True)\n")
    assert got == {FeatureCode.P1, FeatureCode.P2, FeatureCode.P3}


def test_sh_dash_c_argument_triggers_bash_feature():
    got = triggered("import subprocess\nsubprocess.call(['sh', 'sh -c ls'])\n")
    assert FeatureCode.P3 in got


def test_os_system_bash_is_not_bash_feature():
    # the bash feature is defined over process-module calls only
    got = triggered("import os\nos.system('bash -c id')\n")
    assert got == {FeatureCode.R1, FeatureCode.R2}


def test_fstring_parts_count_as_literals():
    got = triggered("u = f'http://{host}/x'\n")
    assert FeatureCode.T3 in got


def test_bytes_literals_count():
    assert FeatureCode.E3 in triggered("x = b'aHR0cDovL2V4YW1wbGUuY29t'\n")


class TestParseSource:
    def test_minimal_program(self):
        tree = parse_source("import os")
        assert len(tree.body) == 1

    def test_empty_source(self):
        assert parse_source("").body == []

    def test_escape_byte_mid_token_rejected(self):
        # independent confirmation that the stock parser rejects it too
        with pytest.raises(SyntaxError):
            compile("x = 1\x1b3\n", "<fixture>", "exec")
        with pytest.raises(ParseFailure):
            parse_source("x = 1\x1b3\n")

    def test_null_byte_rejected(self):
        with pytest.raises(ParseFailure):
            parse_source("x = 1\x00\n")

    def test_syntax_error_rejected(self):
        with pytest.raises(ParseFailure):
            parse_source("def broken(:\n")


class TestClassifyModule:
    def test_known_modules(self):
        manifest = default_manifest()
        assert classify_module("os", manifest) is FeatureCode.R1
        assert classify_module("base64", manifest) is FeatureCode.E1
        assert classify_module("urllib.request", manifest) is FeatureCode.T1
        assert classify_module("subprocess", manifest) is FeatureCode.P1
        assert classify_module("pathlib", manifest) is FeatureCode.R3

    def test_benign_module_absent(self):
        assert classify_module("collections", default_manifest()) is None

    def test_empty_name_rejected(self):
        with pytest.raises(ValueError):
            classify_module("", default_manifest())


def test_determinism():
    source = "import os\nimport base64\neval(base64.b64decode('aW1wb3J0IG9z'))\n"
    assert extract_from_source(source) == extract_from_source(source)


_STATEMENT_POOL = [
    "import os\n",
    "import subprocess\n",
    "from subprocess import Popen\n",
    "os.system('ls')\n",
    "subprocess.run('bash -c id', shell=True)\n",
    "x = 'http://example.org/a'\n",
    "y = 'aHR0cDovL2V4YW1wbGUuY29t'\n",
    "open('f.txt')\n",
    "eval('1')\n",
    "z = 1\n",
    "print(z)\n",
]


@given(st.lists(st.sampled_from(_STATEMENT_POOL), max_size=8),
       st.lists(st.sampled_from(_STATEMENT_POOL), max_size=4))
def test_union_semantics_is_monotone(prefix, suffix):
    before = extract_from_source("".join(prefix))
    after = extract_from_source("".join(prefix + suffix))
    for code in CODE_ORDER:
        if before.flags[code]:
            assert after.flags[code], f"{code} flipped true->false after appending"
            assert after.first_offsets[code] == before.first_offsets[code]


def test_feature_vector_invariants():
    fv = extract_from_source("import os\n")
    assert set(fv.flags) == set(CODE_ORDER)
    assert all(code in fv.first_offsets for code, on in fv.flags.items() if on)
    assert all(code not in fv.first_offsets for code, on in fv.flags.items() if not on)
    with pytest.raises(ValueError):
        FeatureVector({FeatureCode.R1: -1})


class TestManifest:
    def test_default_manifest_loads(self):
        manifest = default_manifest()
        assert "os" in manifest.os_modules
        assert manifest.base64_min_len == 16
        assert manifest.long_string_min_len == 100

    def test_custom_manifest_file(self, tmp_path):
        path = tmp_path / "sig.yaml"
        path.write_text(
            "os_modules: [weirdos]\n"
            "filesystem_modules: [fs]\n"
            "network_modules: [net]\n"
            "encoding_modules: [enc]\n"
            "process_modules: [proc]\n"
            "sensitive_paths: ['/secret']\n"
        )
        manifest = SignatureManifest.from_file(path)
        assert classify_module("weirdos", manifest) is FeatureCode.R1
        assert classify_module("os", manifest) is None
        fv = extract_features(parse_source("weirdos.boom()"), "weirdos.boom()", manifest)
        assert fv.flags[FeatureCode.R2]

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            SignatureManifest.from_mapping(
                {
                    "os_modules": [],
                    "filesystem_modules": ["a"],
                    "network_modules": ["b"],
                    "encoding_modules": ["c"],
                    "process_modules": ["d"],
                    "sensitive_paths": ["x"],
                }
            )

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            SignatureManifest.from_mapping(
                {
                    "os_modules": ["os"],
                    "filesystem_modules": ["a"],
                    "network_modules": ["b"],
                    "encoding_modules": ["c"],
                    "process_modules": ["d"],
                    "sensitive_paths": ["x"],
                    "base64_min_len": 0,
                }
            )


def test_multibyte_source_offsets_are_byte_offsets():
    source = "s = 'héllo'\nimport os\n"
    fv = extract_from_source(source)
    expected = len("s = 'héllo'\n".encode("utf-8"))
    assert fv.first_offsets[FeatureCode.R1] == expected
