"""Section format of ``<program>.log`` / ``<program>.ref`` files.

A section is a header block framed by rule lines, one blank line, then
the body::

    [oval build] ===========================
    [oval build] make Electrons
    [oval build] ===========================

    c++ -O2 -o Electrons Electrons.o

The number of ``=`` in a rule line depends on the section kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("build", "run", "diff")
RULE_LENGTH = {"build": 27, "run": 29, "diff": 27}


def prefix(kind: str) -> str:
    return f"[oval {kind}] "


def rule_line(kind: str) -> str:
    return prefix(kind) + "=" * RULE_LENGTH[kind]


_RULES = {rule_line(k): k for k in KINDS}


@dataclass
class LogSection:
    """One section; ``header_lines`` hold the text after the ``[oval <kind>] `` prefix."""

    kind: str
    header_lines: list[str] = field(default_factory=list)
    body: str = ""

    def render(self) -> str:
        p = prefix(self.kind)
        rule = rule_line(self.kind)
        lines = [rule, *(p + h for h in self.header_lines), rule, ""]
        text = "\n".join(lines) + "\n"
        if self.body:
            text += self.body if self.body.endswith("\n") else self.body + "\n"
        return text


@dataclass
class ParsedSection:
    kind: str
    header_lines: list[str]
    # (1-based line number in the whole file, line text)
    body: list[tuple[int, str]]


def parse_sections(text: str) -> list[ParsedSection]:
    lines = text.splitlines()
    sections: list[ParsedSection] = []
    i, n = 0, len(lines)
    while i < n:
        kind = _RULES.get(lines[i])
        if kind is None:
            i += 1
            continue
        rule = lines[i]
        j = i + 1
        while j < n and lines[j] != rule:
            j += 1
        if j == n:
            break
        p = prefix(kind)
        header = [h[len(p):] if h.startswith(p) else h for h in lines[i + 1 : j]]
        start = j + 1
        if start < n and lines[start] == "":
            start += 1
        end = start
        while end < n and lines[end] not in _RULES:
            end += 1
        sections.append(ParsedSection(kind, header, [(k + 1, lines[k]) for k in range(start, end)]))
        i = end
    return sections


def write_section(path: Path, section: LogSection, *, truncate: bool = False) -> None:
    """Write a section, either starting a new file or appending to it."""
    if truncate or not path.exists():
        path.write_text(section.render(), encoding="utf-8")
        return
    existing = path.read_text(encoding="utf-8", errors="replace")
    sep = ""
    if existing and not existing.endswith("\n"):
        sep = "\n\n"
    elif existing and not existing.endswith("\n\n"):
        sep = "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(sep + section.render())


def last_section_kind(path: Path) -> str | None:
    if not path.exists():
        return None
    sections = parse_sections(path.read_text(encoding="utf-8", errors="replace"))
    return sections[-1].kind if sections else None
