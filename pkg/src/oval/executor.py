"""Per-program lifecycle: build, run, diff and validate, with their log sections."""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping

from .adapters import ToolAdapter, adapter_build, adapter_run
from .config import ProgramKind, ProgramSpec
from .diff import DiffReport, diff_texts, render_report
from .errors import OvalError, ValidateError
from .logs import LogSection, last_section_kind, write_section

log = logging.getLogger(__name__)

WRAP_WIDTH = 60


class Status(str, Enum):
    OK = "ok"
    FAILED = "failed"
    SKIPPED = "skipped"


class DiffStatus(str, Enum):
    CLEAN = "clean"
    DIFFS = "diffs"
    NO_REFERENCE = "no-reference"
    SKIPPED = "skipped"


@dataclass
class RunOutcome:
    spec: ProgramSpec
    built: Status = Status.SKIPPED
    ran: Status = Status.SKIPPED
    diffed: DiffStatus = DiffStatus.SKIPPED


@dataclass(frozen=True)
class ExecContext:
    """Adapters and ambient environment shared by one directory's programs."""

    build_adapter: ToolAdapter
    run_adapter: ToolAdapter
    environ: Mapping[str, str] | None = None
    clean_aux: bool = False


# ---------------------------------------------------------------------------
# Formatting


def _list_prefixes(words: list[str]) -> set[str]:
    seen: dict[str, int] = {}
    for w in words:
        if w.startswith("-") and len(w) > 2:
            seen[w[:2]] = seen.get(w[:2], 0) + 1
    return {p for p, n in seen.items() if n > 1}


def _wrap_command(indent: str, words: list[str], width: int) -> list[str]:
    # Repeated options such as -L/-l/-I start their own group of lines.
    lists = _list_prefixes(words)
    groups: list[list[str]] = [[]]
    prev = None
    for w in words:
        key = w[:2] if w[:2] in lists and len(w) > 2 else None
        if key is not None and key != prev and groups[-1]:
            groups.append([])
        groups[-1].append(w)
        prev = key
    lines = []
    for g, group in enumerate(groups):
        lead = indent if g == 0 else indent + "  "
        current = lead + group[0]
        for w in group[1:]:
            if len(current) + 1 + len(w) > width:
                lines.append(current)
                current = indent + "  " + w
            else:
                current += " " + w
        lines.append(current)
    return lines


def reformat_build_output(text: str, width: int = WRAP_WIDTH) -> str:
    """Collapse blank runs and re-wrap long command lines for legibility."""
    out = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            out.append("")
            continue
        indent = line[: len(line) - len(line.lstrip())].replace("\t", "    ")
        collapsed = indent + " ".join(words)
        if len(collapsed) <= width:
            out.append(collapsed)
        else:
            out.extend(_wrap_command(indent, words, width))
    while out and not out[-1]:
        out.pop()
    return "\n".join(out) + "\n" if out else ""


def format_variable(name: str, value: str, width: int = WRAP_WIDTH) -> list[str]:
    """``NAME = value``; long values continue on following lines.

    Path lists are split at ``:`` with the separator leading each
    continuation line.
    """
    line = f"{name} = {value}"
    if len(line) <= width:
        return [line]
    out = [f"{name} ="]
    if ":" in value:
        first, *rest = value.split(":")
        out.append("  " + first)
        out.extend(" :" + piece for piece in rest)
    else:
        step = width - 2
        out.extend("  " + value[i : i + step] for i in range(0, len(value), step))
    return out


def run_header(spec: ProgramSpec) -> list[str]:
    header = []
    for name, value in spec.variables.items():
        header.extend(format_variable(name, value))
    for name, content in spec.aux_files.items():
        header.append(f"{name}:")
        header.extend(("  " + line).rstrip() for line in content.splitlines())
    return header


# ---------------------------------------------------------------------------
# Phases


def do_build(spec: ProgramSpec, ctx: ExecContext, workdir: Path) -> Status:
    """Build a source program; starts a fresh ``<log_basename>.log``."""
    if spec.kind is not ProgramKind.SOURCE:
        return Status.SKIPPED
    result = adapter_build(ctx.build_adapter, spec, workdir, ctx.environ)
    header = [result.command_line] if result.command_line else []
    section = LogSection("build", header, reformat_build_output(result.output))
    write_section(workdir / spec.log_name, section, truncate=True)
    return Status.OK if result.exit_status == 0 else Status.FAILED


def materialize_aux_files(spec: ProgramSpec, workdir: Path) -> list[Path]:
    written = []
    for name, content in spec.aux_files.items():
        path = workdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        written.append(path)
    return written


def do_run(spec: ProgramSpec, ctx: ExecContext, workdir: Path) -> Status:
    """Run the program and append a run section to its log.

    The log continues the current session when its last section is a
    build; otherwise the run starts a new log.
    """
    log_path = workdir / spec.log_name
    truncate = last_section_kind(log_path) != "build"
    header = run_header(spec)
    try:
        written = materialize_aux_files(spec, workdir)
    except OSError as exc:
        body = f"oval: cannot write auxiliary file: {exc}\n"
        write_section(log_path, LogSection("run", header, body), truncate=truncate)
        return Status.FAILED
    try:
        result = adapter_run(ctx.run_adapter, spec, workdir, ctx.environ)
    finally:
        if ctx.clean_aux:
            for path in written:
                path.unlink(missing_ok=True)
    write_section(log_path, LogSection("run", header, result.output), truncate=truncate)
    return Status.OK if result.exit_status == 0 else Status.FAILED


def do_diff(spec: ProgramSpec, workdir: Path) -> tuple[DiffStatus, DiffReport | None]:
    """Compare the log against the reference and append the diff section."""
    ref_path = workdir / spec.ref_name
    log_path = workdir / spec.log_name
    if not ref_path.exists():
        return DiffStatus.NO_REFERENCE, None
    if not log_path.exists():
        raise OvalError(f"nothing to compare: {log_path} does not exist")
    report = diff_texts(
        ref_path.read_text(encoding="utf-8", errors="replace"),
        log_path.read_text(encoding="utf-8", errors="replace"),
        spec.rules,
    )
    write_section(log_path, render_report(report))
    return (DiffStatus.CLEAN if report.clean else DiffStatus.DIFFS), report


def do_validate(spec: ProgramSpec, workdir: Path) -> Path:
    """Register the current log as the reference."""
    log_path = workdir / spec.log_name
    if not log_path.exists():
        raise ValidateError(f"nothing to validate: {log_path} does not exist")
    ref_path = workdir / spec.ref_name
    shutil.copyfile(log_path, ref_path)
    return ref_path
