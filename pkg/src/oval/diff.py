"""Rule-driven extraction and comparison of program outputs."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from decimal import Decimal, localcontext
from enum import Enum
from typing import Sequence

from .config import ComparisonRule, LineRule, NumberRule, format_decimal
from .logs import LogSection, parse_sections

log = logging.getLogger(__name__)

#: Used when a program declares no comparison rule.
DEFAULT_RULES: tuple[ComparisonRule, ...] = (LineRule("^OVAL:"),)

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def effective_rules(rules: Sequence[ComparisonRule]) -> tuple[ComparisonRule, ...]:
    return tuple(rules) if rules else DEFAULT_RULES


def parse_number(text: str | None) -> Decimal | None:
    if text is None:
        return None
    text = text.strip()
    if not _NUMBER.fullmatch(text):
        return None
    return Decimal(text)


@dataclass(frozen=True)
class Extraction:
    rule_index: int
    source_line_number: int
    raw_line: str
    value: Decimal | None = None


class DiffKind(str, Enum):
    LINE_MISMATCH = "line_mismatch"
    NUMBER_OUT_OF_TOLERANCE = "number_out_of_tolerance"
    MISSING_IN_LOG = "missing_in_log"
    EXTRA_IN_LOG = "extra_in_log"
    RULE_MISMATCH = "rule_mismatch"


@dataclass(frozen=True)
class Difference:
    kind: DiffKind
    ref: Extraction | None
    log: Extraction | None
    tolerance_percent: Decimal | None = None


@dataclass(frozen=True)
class DiffReport:
    rules_used: tuple[ComparisonRule, ...]
    differences: tuple[Difference, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.differences


def body_lines(text: str) -> list[tuple[int, str]]:
    """Numbered lines of the latest run section's body.

    Text without any run section (plain program output) is scanned whole,
    minus ``[oval ...]`` header lines.
    """
    runs = [s for s in parse_sections(text) if s.kind == "run"]
    if runs:
        return runs[-1].body
    return [(i + 1, line) for i, line in enumerate(text.splitlines()) if not line.startswith("[oval ")]


def extract(text: str, rules: Sequence[ComparisonRule]) -> list[Extraction]:
    """One extraction per body line matched by a rule; the first matching rule wins."""
    rules = effective_rules(rules)
    compiled = [r.regex for r in rules]
    found = []
    for lineno, line in body_lines(text):
        for index, (rule, regex) in enumerate(zip(rules, compiled)):
            m = regex.search(line)
            if not m:
                continue
            value = None
            if isinstance(rule, NumberRule):
                value = parse_number(m.group(1))
                if value is None:
                    log.warning("line %d: %r does not capture a number for /%s/", lineno, line, rule.pattern)
            found.append(Extraction(index, lineno, line, value))
            break
    return found


def out_of_tolerance(ref: Decimal, got: Decimal, tolerance_percent: Decimal) -> bool:
    """True when ``got`` deviates from ``ref`` by more than the relative tolerance."""
    with localcontext() as ctx:
        ctx.prec = 60
        if ref == 0:
            return got != 0
        return abs(got - ref) > tolerance_percent / 100 * abs(ref)


def _compare_pair(ref: Extraction, got: Extraction, rules: Sequence[ComparisonRule]) -> Difference | None:
    if ref.rule_index != got.rule_index:
        return Difference(DiffKind.RULE_MISMATCH, ref, got)
    rule = rules[ref.rule_index]
    if isinstance(rule, NumberRule) and ref.value is not None and got.value is not None:
        if out_of_tolerance(ref.value, got.value, rule.tolerance_percent):
            return Difference(DiffKind.NUMBER_OUT_OF_TOLERANCE, ref, got, rule.tolerance_percent)
        return None
    if ref.raw_line.rstrip() != got.raw_line.rstrip():
        return Difference(DiffKind.LINE_MISMATCH, ref, got)
    return None


def compare(ref: Sequence[Extraction], log: Sequence[Extraction], rules: Sequence[ComparisonRule]) -> DiffReport:
    """Pair extractions by position; surplus items are missing or extra."""
    rules = effective_rules(rules)
    differences = []
    for r, g in zip(ref, log):
        d = _compare_pair(r, g, rules)
        if d is not None:
            differences.append(d)
    for r in ref[len(log):]:
        differences.append(Difference(DiffKind.MISSING_IN_LOG, r, None))
    for g in log[len(ref):]:
        differences.append(Difference(DiffKind.EXTRA_IN_LOG, None, g))
    return DiffReport(rules, tuple(differences))


def diff_texts(ref_text: str, log_text: str, rules: Sequence[ComparisonRule]) -> DiffReport:
    rules = effective_rules(rules)
    return compare(extract(ref_text, rules), extract(log_text, rules), rules)


def describe_rule(rule: ComparisonRule) -> str:
    if isinstance(rule, NumberRule):
        return f"diff number: /{rule.pattern}/ ~{format_decimal(rule.tolerance_percent)}%"
    return f"diff line: /{rule.pattern}/"


def _render_difference(d: Difference) -> str:
    ref_at = str(d.ref.source_line_number) if d.ref else "<absent>"
    log_at = str(d.log.source_line_number) if d.log else "<absent>"
    if d.kind is DiffKind.NUMBER_OUT_OF_TOLERANCE:
        title = f"ref#{ref_at} !~ log#{log_at} (>{format_decimal(d.tolerance_percent)}%)"
    else:
        title = f"ref#{ref_at} != log#{log_at}"
    return "\n".join(
        [
            title,
            f"ref: {d.ref.raw_line if d.ref else '<absent>'}",
            "---",
            f"log: {d.log.raw_line if d.log else '<absent>'}",
        ]
    )


def render_report(report: DiffReport) -> LogSection:
    body = "\n\n".join(_render_difference(d) for d in report.differences)
    return LogSection(
        "diff",
        [describe_rule(r) for r in report.rules_used],
        body + "\n" if body else "",
    )
