"""OvalFile parsing, hierarchical merging and program resolution.

An OvalFile is a loose, XML-like list of tags::

    <var name="FEDERATION" value="cmsuf01">
    <environment name="pt15">
      <var name="DATASET" value="eg_ele_pt15">
      <program name="Electrons.cpp" args="-geo detailed">
    </environment>
    <file name=".orcarc">
      MaxEvents = 500
    </file>
    <diffline expr="^OVAL:">
    <diffnumber expr="^energy: (.*)$" tolerance="5%">

Tags need no closing counterpart except ``<environment>`` and ``<file>``,
which are blocks. The content of a ``<file>`` block is taken verbatim.
"""

from __future__ import annotations

import logging
import os
import re
import shlex
import textwrap
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from itertools import chain
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import ParseError

log = logging.getLogger(__name__)

OVALFILE = "OvalFile"

#: Extensions treated as compiled sources without looking at the file.
SOURCE_EXTENSIONS = frozenset({".cpp", ".cc", ".c", ".cxx", ".C", ".f"})

# Constructs outside the portable regex subset.
_UNSUPPORTED_REGEX = [
    (re.compile(r"\(\?<[=!]"), "lookbehind"),
    (re.compile(r"\(\?\("), "conditional group"),
    (re.compile(r"\(\?(R|\d|P>|&)"), "recursion"),
]


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ProgramDecl:
    name: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class VarDecl:
    name: str
    value: str


@dataclass(frozen=True)
class AuxFilePart:
    filename: str
    content: str


@dataclass(frozen=True)
class LineRule:
    """Compare every output line matching ``pattern`` verbatim."""

    pattern: str

    @property
    def regex(self) -> re.Pattern[str]:
        return re.compile(self.pattern)


@dataclass(frozen=True)
class NumberRule:
    """Compare the number captured by ``pattern`` within a percent tolerance."""

    pattern: str
    tolerance_percent: Decimal

    @property
    def regex(self) -> re.Pattern[str]:
        return re.compile(self.pattern)


@dataclass(frozen=True)
class OptionsDecl:
    command: str
    value: str


@dataclass(frozen=True)
class ConfigDecl:
    name: str
    value: str


@dataclass(frozen=True)
class VersionDecl:
    version: str


Directive = Union[
    ProgramDecl, VarDecl, AuxFilePart, LineRule, NumberRule, OptionsDecl, ConfigDecl, VersionDecl
]
ComparisonRule = Union[LineRule, NumberRule]

# Directives only meaningful at the top level of a file.
_TOP_LEVEL_ONLY = (OptionsDecl, ConfigDecl, VersionDecl)


@dataclass(frozen=True)
class EnvironmentBlock:
    name: str
    directives: tuple[Directive, ...] = ()


@dataclass(frozen=True)
class ConfigNode:
    source_path: Path | None
    directives: tuple[Directive, ...] = ()
    environments: tuple[EnvironmentBlock, ...] = ()


@dataclass(frozen=True)
class EffectiveConfig:
    """Merged configuration of one directory (site defaults, ancestors, leaf).

    Scalar directives appear at most once per scope; list directives keep
    their root-to-leaf order.
    """

    directives: tuple[Directive, ...] = ()
    environments: tuple[EnvironmentBlock, ...] = ()
    sources: tuple[Path, ...] = ()

    def config(self, name: str, default: str | None = None) -> str | None:
        for d in self.directives:
            if isinstance(d, ConfigDecl) and d.name == name:
                return d.value
        return default

    @property
    def options(self) -> dict[str, str]:
        return {d.command: d.value for d in self.directives if isinstance(d, OptionsDecl)}

    @property
    def version(self) -> str | None:
        for d in self.directives:
            if isinstance(d, VersionDecl):
                return d.version
        return None

    @property
    def variables(self) -> dict[str, str]:
        return {d.name: d.value for d in self.directives if isinstance(d, VarDecl)}


class ProgramKind(str, Enum):
    SOURCE = "source"
    SCRIPT = "script"
    BINARY = "binary"


@dataclass(frozen=True)
class ProgramSpec:
    """One runnable occurrence of a test program."""

    target: str
    kind: ProgramKind
    args: tuple[str, ...] = ()
    environment: str | None = None
    occurrence_index: int = 1
    variables: dict[str, str] = field(default_factory=dict)
    aux_parts: dict[str, tuple[str, ...]] = field(default_factory=dict)
    rules: tuple[ComparisonRule, ...] = ()
    log_basename: str = ""

    @property
    def stem(self) -> str:
        return target_stem(self.target)

    @property
    def aux_files(self) -> dict[str, str]:
        return {name: assemble_aux_file(name, self) for name in self.aux_parts}

    @property
    def log_name(self) -> str:
        return f"{self.log_basename}.log"

    @property
    def ref_name(self) -> str:
        return f"{self.log_basename}.ref"


def target_stem(target: str) -> str:
    """``"Electrons.cpp"`` -> ``"Electrons"``; extension-less names are kept."""
    return Path(target).stem


# ---------------------------------------------------------------------------
# Tag reader


@dataclass
class _Tag:
    name: str
    attrs: dict[str, str]
    closing: bool
    line: int


_TAG_NAME = re.compile(r"\s*(/?)([A-Za-z_][\w.-]*)")
_ATTR = re.compile(r"\s*([A-Za-z_][\w-]*)\s*=\s*(?:\"([^\"]*)\"|'([^']*)')")


class _Reader:
    def __init__(self, text: str, path: Path | str):
        self.text = text
        self.path = path
        self.pos = 0
        self.line = 1

    def _advance(self, new_pos: int) -> None:
        self.line += self.text.count("\n", self.pos, new_pos)
        self.pos = new_pos

    def next_tag(self) -> _Tag | None:
        text = self.text
        while True:
            lt = text.find("<", self.pos)
            stray = text[self.pos : lt if lt >= 0 else len(text)]
            if stray.strip():
                first = self.line + stray[: len(stray) - len(stray.lstrip())].count("\n")
                log.warning("%s:%d: ignoring text outside tags: %r", self.path, first, stray.strip()[:40])
            if lt < 0:
                self._advance(len(text))
                return None
            self._advance(lt)
            if text.startswith("<!--", lt):
                end = text.find("-->", lt)
                if end < 0:
                    raise ParseError(self.path, self.line, "unterminated comment")
                self._advance(end + 3)
                continue
            return self._read_tag()

    def _read_tag(self) -> _Tag:
        text, start, line = self.text, self.pos, self.line
        quote = None
        j = start + 1
        while j < len(text):
            ch = text[j]
            if quote:
                if ch == quote:
                    quote = None
                elif ch == "\n":
                    raise ParseError(self.path, line, "unterminated attribute value")
            elif ch in "\"'":
                quote = ch
            elif ch == ">":
                break
            elif ch == "<":
                raise ParseError(self.path, line, "malformed tag: '<' found before closing '>'")
            j += 1
        else:
            raise ParseError(self.path, line, "malformed tag: no closing '>' before end of file")
        raw = text[start + 1 : j]
        self._advance(j + 1)
        return self._split_tag(raw, line)

    def _split_tag(self, raw: str, line: int) -> _Tag:
        m = _TAG_NAME.match(raw)
        if not m:
            raise ParseError(self.path, line, f"malformed tag <{raw}>")
        closing = bool(m.group(1))
        rest = raw[m.end() :].rstrip()
        if rest.endswith("/"):
            rest = rest[:-1]
        attrs: dict[str, str] = {}
        pos = 0
        while pos < len(rest):
            am = _ATTR.match(rest, pos)
            if not am:
                if rest[pos:].strip():
                    raise ParseError(self.path, line, f"malformed attribute in <{m.group(2)}>: {rest[pos:].strip()!r}")
                break
            key = am.group(1)
            if key in attrs:
                raise ParseError(self.path, line, f"duplicate attribute {key!r}")
            attrs[key] = am.group(2) if am.group(2) is not None else am.group(3)
            pos = am.end()
        return _Tag(m.group(2), attrs, closing, line)

    def read_block(self, name: str, opened_at: int) -> str:
        closer = re.compile(rf"</\s*{re.escape(name)}\s*>")
        m = closer.search(self.text, self.pos)
        if not m:
            raise ParseError(self.path, opened_at, f"unterminated <{name}> block")
        content = self.text[self.pos : m.start()]
        self._advance(m.end())
        return content


# ---------------------------------------------------------------------------
# Parsing


def check_pattern(pattern: str, *, captures: int | None = None) -> re.Pattern[str]:
    """Compile a rule pattern, rejecting constructs outside the supported subset.

    Raises ValueError with a human readable message.
    """
    for probe, what in _UNSUPPORTED_REGEX:
        if probe.search(pattern):
            raise ValueError(f"unsupported regular expression construct ({what}) in /{pattern}/")
    try:
        compiled = re.compile(pattern)
    except re.error as exc:
        raise ValueError(f"invalid regular expression /{pattern}/: {exc}") from None
    if captures is not None and compiled.groups != captures:
        raise ValueError(
            f"/{pattern}/ must contain exactly {captures} capture group, found {compiled.groups}"
        )
    return compiled


_TOLERANCE = re.compile(r"\s*(\d+(?:\.\d*)?|\.\d+)\s*%?\s*")


def parse_tolerance(text: str) -> Decimal:
    """Accept ``5``, ``5%`` or ``5.0%``; all mean percent."""
    m = _TOLERANCE.fullmatch(text)
    if not m:
        raise ValueError(f"invalid tolerance {text!r}")
    return Decimal(m.group(1))


def _normalize_block(raw: str) -> str:
    lines = raw.split("\n")
    if lines and not lines[0].strip():
        lines = lines[1:]
    if lines and not lines[-1].strip():
        lines = lines[:-1]
    return textwrap.dedent("\n".join(lines))


_REQUIRED = {
    "program": ("name",),
    "var": ("name", "value"),
    "diffline": ("expr",),
    "diffnumber": ("expr", "tolerance"),
    "options": ("command", "value"),
    "config": ("name", "value"),
    "oval": ("version",),
    "environment": ("name",),
    "file": ("name",),
}
_OPTIONAL = {"program": ("args",)}


def _directive(tag: _Tag, path: Path | str) -> Directive | None:
    required = _REQUIRED.get(tag.name)
    if required is None:
        log.warning("%s:%d: unknown tag <%s> skipped", path, tag.line, tag.name)
        return None
    missing = [a for a in required if a not in tag.attrs]
    if missing:
        raise ParseError(path, tag.line, f"<{tag.name}> lacks attribute(s): {', '.join(missing)}")
    extra = set(tag.attrs) - set(required) - set(_OPTIONAL.get(tag.name, ()))
    if extra:
        log.warning("%s:%d: <%s> ignores attribute(s): %s", path, tag.line, tag.name, ", ".join(sorted(extra)))
    a = tag.attrs
    try:
        if tag.name == "program":
            return ProgramDecl(a["name"], tuple(shlex.split(a.get("args", ""))))
        if tag.name == "var":
            return VarDecl(a["name"], a["value"])
        if tag.name == "diffline":
            check_pattern(a["expr"])
            return LineRule(a["expr"])
        if tag.name == "diffnumber":
            check_pattern(a["expr"], captures=1)
            return NumberRule(a["expr"], parse_tolerance(a["tolerance"]))
        if tag.name == "options":
            return OptionsDecl(a["command"], a["value"])
        if tag.name == "config":
            return ConfigDecl(a["name"], a["value"])
        if tag.name == "oval":
            return VersionDecl(a["version"])
    except ValueError as exc:
        raise ParseError(path, tag.line, str(exc)) from None
    raise AssertionError(tag.name)


def parse_ovalfile(text: str, path: Path | str) -> ConfigNode:
    """Parse an OvalFile document; fails atomically with a ParseError."""
    reader = _Reader(text, path)
    top: list[Directive] = []
    envs: list[EnvironmentBlock] = []
    seen_envs: set[str] = set()
    env_name: str | None = None
    env_line = 0
    env_body: list[Directive] = []

    while (tag := reader.next_tag()) is not None:
        if tag.closing:
            if tag.name == "environment" and env_name is not None:
                envs.append(EnvironmentBlock(env_name, tuple(env_body)))
                env_name = None
                continue
            raise ParseError(path, tag.line, f"unexpected </{tag.name}>")
        if tag.name == "environment":
            if env_name is not None:
                raise ParseError(path, tag.line, "nested <environment> blocks are not allowed")
            if "name" not in tag.attrs:
                raise ParseError(path, tag.line, "<environment> lacks attribute(s): name")
            env_name = tag.attrs["name"]
            if env_name in seen_envs:
                raise ParseError(path, tag.line, f"duplicate environment {env_name!r}")
            seen_envs.add(env_name)
            env_line, env_body = tag.line, []
            continue
        if tag.name == "file":
            if "name" not in tag.attrs:
                raise ParseError(path, tag.line, "<file> lacks attribute(s): name")
            d: Directive | None = AuxFilePart(tag.attrs["name"], _normalize_block(reader.read_block("file", tag.line)))
        else:
            d = _directive(tag, path)
        if d is None:
            continue
        if env_name is not None:
            if isinstance(d, _TOP_LEVEL_ONLY):
                log.warning("%s:%d: <%s> is only honored at top level; skipped", path, tag.line, tag.name)
                continue
            env_body.append(d)
        else:
            top.append(d)

    if env_name is not None:
        raise ParseError(path, env_line, f"unterminated <environment name={env_name!r}> block")
    return ConfigNode(Path(path), tuple(top), tuple(envs))


def load_ovalfile(path: Path) -> ConfigNode:
    return parse_ovalfile(path.read_text(encoding="utf-8"), path)


def _quote(value: str) -> str:
    if '"' not in value:
        return f'"{value}"'
    if "'" not in value:
        return f"'{value}'"
    raise ValueError(f"value cannot be quoted: {value!r}")


def format_decimal(value: Decimal) -> str:
    """``Decimal("5.0")`` -> ``"5"``, without exponent notation."""
    return format(value.normalize(), "f")


def _serialize_directive(d: Directive, indent: str) -> str:
    if isinstance(d, ProgramDecl):
        args = f" args={_quote(shlex.join(d.args))}" if d.args else ""
        return f"{indent}<program name={_quote(d.name)}{args}>"
    if isinstance(d, VarDecl):
        return f"{indent}<var name={_quote(d.name)} value={_quote(d.value)}>"
    if isinstance(d, AuxFilePart):
        body = textwrap.indent(d.content, indent + "  ")
        return f"{indent}<file name={_quote(d.filename)}>\n{body}\n{indent}</file>"
    if isinstance(d, LineRule):
        return f"{indent}<diffline expr={_quote(d.pattern)}>"
    if isinstance(d, NumberRule):
        return f"{indent}<diffnumber expr={_quote(d.pattern)} tolerance=\"{format_decimal(d.tolerance_percent)}%\">"
    if isinstance(d, OptionsDecl):
        return f"{indent}<options command={_quote(d.command)} value={_quote(d.value)}>"
    if isinstance(d, ConfigDecl):
        return f"{indent}<config name={_quote(d.name)} value={_quote(d.value)}>"
    if isinstance(d, VersionDecl):
        return f"{indent}<oval version={_quote(d.version)}>"
    raise TypeError(d)


def serialize_ovalfile(node: ConfigNode | EffectiveConfig) -> str:
    """Render a node back to OvalFile text (model-level round trip)."""
    out = [_serialize_directive(d, "") for d in node.directives]
    for env in node.environments:
        out.append(f"<environment name={_quote(env.name)}>")
        out.extend(_serialize_directive(d, "  ") for d in env.directives)
        out.append("</environment>")
    return "\n".join(out) + "\n" if out else ""


# ---------------------------------------------------------------------------
# Merging


def _scalar_key(d: Directive) -> tuple | None:
    if isinstance(d, VarDecl):
        return ("var", d.name)
    if isinstance(d, ConfigDecl):
        return ("config", d.name)
    if isinstance(d, OptionsDecl):
        return ("options", d.command)
    if isinstance(d, VersionDecl):
        return ("version",)
    return None


def _nearest_wins(directives: Iterable[Directive]) -> tuple[Directive, ...]:
    items = list(directives)
    seen: set[tuple] = set()
    kept: list[Directive] = []
    for d in reversed(items):
        key = _scalar_key(d)
        if key is not None:
            if key in seen:
                continue
            seen.add(key)
        kept.append(d)
    return tuple(reversed(kept))


def _sources(node: ConfigNode | EffectiveConfig) -> tuple[Path, ...]:
    if isinstance(node, EffectiveConfig):
        return node.sources
    return (node.source_path,) if node.source_path is not None else ()


def merge_configs(
    ancestors: Sequence[ConfigNode | EffectiveConfig], leaf: ConfigNode | EffectiveConfig
) -> EffectiveConfig:
    """Merge root-most first: scalars nearest-wins, lists concatenate."""
    nodes = [*ancestors, leaf]
    envs: dict[str, list[Directive]] = {}
    for node in nodes:
        for env in node.environments:
            envs.setdefault(env.name, []).extend(env.directives)
    return EffectiveConfig(
        directives=_nearest_wins(chain.from_iterable(n.directives for n in nodes)),
        environments=tuple(EnvironmentBlock(name, _nearest_wins(ds)) for name, ds in envs.items()),
        sources=tuple(chain.from_iterable(_sources(n) for n in nodes)),
    )


def without_programs(node: ConfigNode) -> ConfigNode:
    """The node as seen from a subdirectory: everything but its programs."""

    def keep(ds):
        return tuple(d for d in ds if not isinstance(d, ProgramDecl))

    return ConfigNode(
        node.source_path,
        keep(node.directives),
        tuple(EnvironmentBlock(e.name, keep(e.directives)) for e in node.environments),
    )


# ---------------------------------------------------------------------------
# Program resolution


def classify_target(target: str, directory: Path | None = None) -> ProgramKind:
    path = Path(target)
    if path.suffix in SOURCE_EXTENSIONS:
        return ProgramKind.SOURCE
    if directory is not None:
        full = directory / path
        if full.is_file() and os.access(full, os.X_OK):
            with open(full, "rb") as fh:
                return ProgramKind.SCRIPT if fh.read(2) == b"#!" else ProgramKind.BINARY
    log.warning("cannot classify %r: treating it as a source to build", target)
    return ProgramKind.SOURCE


def _log_basenames(specs: list[tuple[str, str | None]]) -> list[str]:
    stems = Counter(stem for stem, _ in specs)
    bases = [stem + (f".{env}" if stems[stem] > 1 and env else "") for stem, env in specs]
    counts = Counter(bases)
    seen: Counter[str] = Counter()
    names = []
    for base in bases:
        if counts[base] > 1:
            seen[base] += 1
            base = f"{base}.{seen[base]}"
        names.append(base)
    # Guard against suffixed names colliding with a genuine stem.
    taken: set[str] = set()
    for i, name in enumerate(names):
        candidate, n = name, 1
        while candidate in taken:
            n += 1
            candidate = f"{name}.{n}"
        taken.add(candidate)
        names[i] = candidate
    return names


def _scope(directives: Sequence[Directive]):
    variables = {d.name: d.value for d in directives if isinstance(d, VarDecl)}
    rules = tuple(d for d in directives if isinstance(d, (LineRule, NumberRule)))
    parts: dict[str, list[str]] = {}
    for d in directives:
        if isinstance(d, AuxFilePart):
            parts.setdefault(d.filename, []).append(d.content)
    return variables, rules, parts


def resolve_program_specs(cfg: EffectiveConfig, directory: Path | None = None) -> list[ProgramSpec]:
    """Expand every ProgramDecl occurrence into a ProgramSpec.

    Environment-scoped programs see top-level variables, rules and aux-file
    parts followed by their environment's own; environment variables win.
    ``directory`` is used to classify targets that are not known sources.
    """
    top_vars, top_rules, top_parts = _scope(cfg.directives)
    pending: list[tuple[ProgramDecl, str | None, dict, tuple, dict]] = []
    for d in cfg.directives:
        if isinstance(d, ProgramDecl):
            pending.append((d, None, top_vars, top_rules, top_parts))
    for env in cfg.environments:
        env_vars, env_rules, env_parts = _scope(env.directives)
        variables = {**top_vars, **env_vars}
        parts = {name: list(p) for name, p in top_parts.items()}
        for name, p in env_parts.items():
            parts.setdefault(name, []).extend(p)
        for d in env.directives:
            if isinstance(d, ProgramDecl):
                pending.append((d, env.name, variables, top_rules + env_rules, parts))

    occurrences: Counter[str] = Counter()
    keyed = []
    for decl, env_name, *_ in pending:
        stem = target_stem(decl.name)
        occurrences[stem] += 1
        keyed.append((stem, env_name, occurrences[stem]))
    names = _log_basenames([(stem, env) for stem, env, _ in keyed])

    specs = []
    for (decl, env_name, variables, rules, parts), (_, _, occ), name in zip(pending, keyed, names):
        specs.append(
            ProgramSpec(
                target=decl.name,
                kind=classify_target(decl.name, directory),
                args=decl.args,
                environment=env_name,
                occurrence_index=occ,
                variables=dict(variables),
                aux_parts={k: tuple(v) for k, v in parts.items()},
                rules=rules,
                log_basename=name,
            )
        )
    return specs


def assemble_aux_file(filename: str, spec: ProgramSpec) -> str:
    """Concatenate the parts of an auxiliary file, top level first."""
    parts = spec.aux_parts[filename]
    return "\n".join(p.rstrip("\n") for p in parts) + "\n"
