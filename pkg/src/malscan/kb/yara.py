"""Structural parser for a practical subset of the YARA rule language.

The pipeline needs rule identity, tags, metadata, and string inventories to
turn signature rules into retrievable descriptions; conditions are captured as
raw text and never evaluated. Supported subset: optional private/global
scopes, tags, meta entries with string/int/bool values, text strings with
nocase/wide/ascii/fullword/private modifiers, hex strings with wildcards, and
slash-delimited regex strings. One malformed rule is reported and skipped
without aborting the rest of the batch.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_KNOWN_STRING_MODIFIERS = frozenset({"nocase", "wide", "ascii", "fullword", "private"})
_SECTION_KEYWORDS = ("meta", "strings", "condition")

TEXT = "text"
HEX = "hex"
REGEX = "regex"


class YaraError(Exception):
    pass


class RuleSyntaxError(YaraError):
    """One unparseable rule: the offending source span and the reason."""

    def __init__(self, reason: str, span: tuple[int, int], identifier: str | None = None):
        super().__init__(reason)
        self.reason = reason
        self.span = span
        self.identifier = identifier

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"RuleSyntaxError({self.reason!r}, span={self.span}, identifier={self.identifier!r})"


class TotalParseFailure(YaraError):
    """Rule-like input from which zero rules could be recovered."""

    def __init__(self, errors: list[RuleSyntaxError]):
        super().__init__(f"no rules recovered ({len(errors)} errors)")
        self.errors = errors


@dataclass(frozen=True)
class YaraString:
    name: str  # "$foo" or anonymous "$"
    kind: str  # text | hex | regex
    pattern: str
    modifiers: tuple[str, ...] = ()


@dataclass(frozen=True)
class YaraRule:
    identifier: str
    tags: tuple[str, ...] = ()
    meta: dict[str, object] = field(default_factory=dict)
    strings: tuple[YaraString, ...] = ()
    condition: str = ""
    scopes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _IDENT_RE.fullmatch(self.identifier):
            raise ValueError(f"invalid rule identifier: {self.identifier!r}")
        named = [s.name for s in self.strings if s.name != "$"]
        if len(named) != len(set(named)):
            raise ValueError(f"duplicate string names in rule {self.identifier}")


@dataclass
class YaraParseResult:
    rules: list[YaraRule]
    errors: list[RuleSyntaxError]


class _Scanner:
    """Cursor over rule source, aware of comments and both string syntaxes."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def error(self, reason: str, start: int | None = None) -> RuleSyntaxError:
        begin = self.pos if start is None else start
        return RuleSyntaxError(reason, (begin, min(self.pos + 1, len(self.text))))

    def skip_trivia(self) -> None:
        while not self.eof():
            ch = self.text[self.pos]
            if ch.isspace():
                self.pos += 1
            elif self.text.startswith("//", self.pos):
                nl = self.text.find("\n", self.pos)
                self.pos = len(self.text) if nl == -1 else nl + 1
            elif self.text.startswith("/*", self.pos):
                end = self.text.find("*/", self.pos + 2)
                if end == -1:
                    raise self.error("unterminated block comment")
                self.pos = end + 2
            else:
                return

    def try_char(self, ch: str) -> bool:
        self.skip_trivia()
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def expect_char(self, ch: str) -> None:
        if not self.try_char(ch):
            raise self.error(f"expected {ch!r}, found {self.peek()!r}")

    def peek_keyword(self, word: str) -> bool:
        self.skip_trivia()
        end = self.pos + len(word)
        if self.text.startswith(word, self.pos):
            return end >= len(self.text) or not (self.text[end].isalnum() or self.text[end] == "_")
        return False

    def try_keyword(self, word: str) -> bool:
        if self.peek_keyword(word):
            self.pos += len(word)
            return True
        return False

    def read_identifier(self) -> str:
        self.skip_trivia()
        m = _IDENT_RE.match(self.text, self.pos)
        if not m:
            raise self.error(f"expected identifier, found {self.peek()!r}")
        self.pos = m.end()
        return m.group()

    def read_quoted(self) -> str:
        """Double-quoted string with the usual escapes, returned unescaped."""
        self.skip_trivia()
        if self.peek() != '"':
            raise self.error(f"expected string literal, found {self.peek()!r}")
        self.pos += 1
        out: list[str] = []
        while True:
            if self.eof():
                raise self.error("unterminated string literal")
            ch = self.text[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(out)
            if ch == "\\":
                self.pos += 1
                if self.eof():
                    raise self.error("dangling escape in string literal")
                esc = self.text[self.pos]
                if esc == "n":
                    out.append("\n")
                elif esc == "t":
                    out.append("\t")
                elif esc == "r":
                    out.append("\r")
                elif esc == "x":
                    hexpart = self.text[self.pos + 1: self.pos + 3]
                    if len(hexpart) != 2 or not re.fullmatch(r"[0-9A-Fa-f]{2}", hexpart):
                        raise self.error("bad \\x escape in string literal")
                    out.append(chr(int(hexpart, 16)))
                    self.pos += 2
                elif esc in ('"', "\\"):
                    out.append(esc)
                else:
                    raise self.error(f"unsupported escape \\{esc}")
                self.pos += 1
            elif ch == "\n":
                raise self.error("newline inside string literal")
            else:
                out.append(ch)
                self.pos += 1

    def read_regex(self) -> str:
        """Slash-delimited regex, returned verbatim (escapes preserved)."""
        self.skip_trivia()
        if self.peek() != "/":
            raise self.error(f"expected regex literal, found {self.peek()!r}")
        self.pos += 1
        start = self.pos
        while True:
            if self.eof() or self.text[self.pos] == "\n":
                raise self.error("unterminated regex literal")
            ch = self.text[self.pos]
            if ch == "\\":
                self.pos += 2
                continue
            if ch == "/":
                pattern = self.text[start: self.pos]
                self.pos += 1
                return pattern
            self.pos += 1

    def read_hex_body(self) -> str:
        """Brace-delimited hex pattern, whitespace-normalized."""
        self.skip_trivia()
        if self.peek() != "{":
            raise self.error(f"expected hex string, found {self.peek()!r}")
        self.pos += 1
        start = self.pos
        depth = 1
        while True:
            if self.eof():
                raise self.error("unterminated hex string")
            ch = self.text[self.pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    body = self.text[start: self.pos]
                    self.pos += 1
                    normalized = " ".join(body.split())
                    if not re.fullmatch(r"[0-9A-Fa-f?\s\[\]\-|()]*", body) or not normalized:
                        raise self.error("invalid hex string body")
                    return normalized
            self.pos += 1


def _parse_meta(sc: _Scanner) -> dict[str, object]:
    meta: dict[str, object] = {}
    while True:
        sc.skip_trivia()
        if sc.peek() == "}" or any(sc.peek_keyword(k) for k in _SECTION_KEYWORDS):
            return meta
        key = sc.read_identifier()
        sc.expect_char("=")
        sc.skip_trivia()
        ch = sc.peek()
        if ch == '"':
            meta[key] = sc.read_quoted()
        elif sc.try_keyword("true"):
            meta[key] = True
        elif sc.try_keyword("false"):
            meta[key] = False
        else:
            m = re.match(r"-?\d+", sc.text[sc.pos:])
            if not m:
                raise sc.error(f"bad meta value for {key!r}")
            meta[key] = int(m.group())
            sc.pos += m.end()


def _parse_strings(sc: _Scanner) -> tuple[YaraString, ...]:
    strings: list[YaraString] = []
    while True:
        sc.skip_trivia()
        if sc.peek() == "}" or any(sc.peek_keyword(k) for k in _SECTION_KEYWORDS):
            return tuple(strings)
        if sc.peek() != "$":
            raise sc.error(f"expected string declaration, found {sc.peek()!r}")
        sc.pos += 1
        m = _IDENT_RE.match(sc.text, sc.pos)
        name = "$"
        if m:
            name = "$" + m.group()
            sc.pos = m.end()
        sc.expect_char("=")
        sc.skip_trivia()
        ch = sc.peek()
        if ch == '"':
            kind, pattern = TEXT, sc.read_quoted()
        elif ch == "{":
            kind, pattern = HEX, sc.read_hex_body()
        elif ch == "/":
            kind, pattern = REGEX, sc.read_regex()
        else:
            raise sc.error(f"expected string value, found {ch!r}")
        modifiers: list[str] = []
        while True:
            sc.skip_trivia()
            m = _IDENT_RE.match(sc.text, sc.pos)
            if m and m.group() in _KNOWN_STRING_MODIFIERS:
                modifiers.append(m.group())
                sc.pos = m.end()
            else:
                break
        strings.append(YaraString(name, kind, pattern, tuple(modifiers)))


def _parse_condition(sc: _Scanner) -> str:
    start = sc.pos
    depth = 0
    while True:
        if sc.eof():
            raise sc.error("unterminated rule body", start)
        ch = sc.text[sc.pos]
        if ch == '"':
            sc.read_quoted()
            continue
        if sc.text.startswith("//", sc.pos) or sc.text.startswith("/*", sc.pos):
            sc.skip_trivia()
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "}" and depth <= 0:
            condition = " ".join(sc.text[start: sc.pos].split())
            if not condition:
                raise sc.error("empty condition", start)
            return condition
        sc.pos += 1


def _parse_rule(sc: _Scanner) -> YaraRule:
    scopes: list[str] = []
    while True:
        if sc.try_keyword("private"):
            scopes.append("private")
        elif sc.try_keyword("global"):
            scopes.append("global")
        else:
            break
    if not sc.try_keyword("rule"):
        raise sc.error(f"expected 'rule', found {sc.peek()!r}")
    identifier = sc.read_identifier()
    tags: list[str] = []
    if sc.try_char(":"):
        while True:
            sc.skip_trivia()
            if sc.peek() == "{":
                break
            tags.append(sc.read_identifier())
        if not tags:
            raise sc.error(f"rule {identifier}: empty tag list")
    sc.expect_char("{")

    meta: dict[str, object] = {}
    strings: tuple[YaraString, ...] = ()
    condition = ""
    seen: set[str] = set()
    while True:
        sc.skip_trivia()
        if sc.peek() == "}":
            break
        matched = False
        for section in _SECTION_KEYWORDS:
            if sc.peek_keyword(section):
                sc.try_keyword(section)
                sc.expect_char(":")
                if section in seen:
                    raise sc.error(f"rule {identifier}: duplicate {section} section")
                seen.add(section)
                if section == "meta":
                    meta = _parse_meta(sc)
                elif section == "strings":
                    strings = _parse_strings(sc)
                else:
                    condition = _parse_condition(sc)
                matched = True
                break
        if not matched:
            raise sc.error(f"rule {identifier}: unexpected content {sc.peek()!r}")
    sc.expect_char("}")
    if "condition" not in seen:
        raise sc.error(f"rule {identifier}: missing condition section")
    try:
        return YaraRule(identifier, tuple(tags), meta, strings, condition, tuple(scopes))
    except ValueError as err:
        raise sc.error(str(err)) from err


def _recover(sc: _Scanner, failed_at: int) -> None:
    """Skip past the rule that failed: jump to the next plausible rule header."""
    sc.pos = max(sc.pos, failed_at + 1)
    while not sc.eof():
        if sc.peek_keyword("rule") or sc.peek_keyword("private") or sc.peek_keyword("global"):
            return
        sc.pos += 1


def parse_yara(ruleset: str) -> YaraParseResult:
    """Parse every rule in a ruleset, collecting per-rule errors.

    Comments and import/include lines are skipped. Raises TotalParseFailure
    only when the input contained rule material and nothing was recovered;
    empty input yields an empty result.
    """
    sc = _Scanner(ruleset)
    rules: list[YaraRule] = []
    errors: list[RuleSyntaxError] = []
    while True:
        try:
            sc.skip_trivia()
        except RuleSyntaxError as err:
            errors.append(err)
            break
        if sc.eof():
            break
        if sc.try_keyword("import") or sc.try_keyword("include"):
            try:
                sc.read_quoted()
            except RuleSyntaxError as err:
                errors.append(err)
                _recover(sc, err.span[0])
            continue
        start = sc.pos
        try:
            rules.append(_parse_rule(sc))
        except RuleSyntaxError as err:
            errors.append(RuleSyntaxError(err.reason, (start, err.span[1]), err.identifier))
            _recover(sc, start)
    if errors and not rules:
        raise TotalParseFailure(errors)
    return YaraParseResult(rules, errors)


def _escape_text(value: str) -> str:
    out: list[str] = []
    for ch in value:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    return "".join(out)


def serialize_rule(rule: YaraRule) -> str:
    """Canonical source text; parse(serialize(rule)) yields an equal rule."""
    lines: list[str] = []
    head = " ".join([*rule.scopes, "rule", rule.identifier])
    if rule.tags:
        head += " : " + " ".join(rule.tags)
    lines.append(head + " {")
    if rule.meta:
        lines.append("    meta:")
        for key, value in rule.meta.items():
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, int):
                rendered = str(value)
            else:
                rendered = f'"{_escape_text(str(value))}"'
            lines.append(f"        {key} = {rendered}")
    if rule.strings:
        lines.append("    strings:")
        for s in rule.strings:
            if s.kind == TEXT:
                body = f'"{_escape_text(s.pattern)}"'
            elif s.kind == HEX:
                body = f"{{ {s.pattern} }}"
            else:
                body = f"/{s.pattern}/"
            suffix = (" " + " ".join(s.modifiers)) if s.modifiers else ""
            lines.append(f"        {s.name} = {body}{suffix}")
    lines.append("    condition:")
    lines.append(f"        {rule.condition}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def describe_rule(rule: YaraRule, llm=None) -> str:
    """Human-readable one-liner for a rule.

    With an llm callable the rule source is handed over and its response
    returned as-is; otherwise a deterministic template fills in from metadata.
    """
    if llm is not None:
        return llm(serialize_rule(rule))
    what = str(rule.meta.get("description") or "patterns")
    target = str(rule.meta.get("os") or "any OS")
    return (
        f"{rule.identifier}: detects {what} targeting {target}; "
        f"matches {len(rule.strings)} string pattern(s)."
    )
