"""The ``oval`` command line.

    oval <command> [targets...] [--no-recurse] [--clean-aux] [--strict]

Built-in commands are build, run, validate, diff and prod. Executables in
a site ``Commands`` directory add (or replace) commands.

Exit status: 0 clean, 1 differences found, 2 failures or usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import RELEASE
from .adapters import discover_adapter, resolve_interface_map
from .config import (
    OVALFILE,
    ConfigNode,
    EffectiveConfig,
    ProgramSpec,
    VersionDecl,
    load_ovalfile,
    merge_configs,
    resolve_program_specs,
    without_programs,
)
from .diff import render_report
from .errors import OvalError
from .executor import DiffStatus, ExecContext, RunOutcome, Status, do_build, do_diff, do_run, do_validate
from .site import DISPATCH_GUARD, Delegate, SiteContext, determine_version, load_site_defaults

log = logging.getLogger("oval")

BUILTIN_COMMANDS = ("build", "run", "validate", "diff", "prod")

CLEAN, DIFFS, FAILURES = 0, 1, 2


@dataclass
class Invocation:
    command: str
    targets: list[str] = field(default_factory=list)
    clean_aux: bool = False
    no_recurse: bool = False
    strict: bool = False
    start_dir: Path = field(default_factory=Path.cwd)


@dataclass
class SummaryLine:
    name: str
    phases: list[str]
    failed: bool = False
    diffs: bool = False

    def render(self) -> str:
        tail = ", ".join(self.phases)
        if self.failed:
            return f"  {self.name}: {tail} (FAILED)."
        if self.diffs:
            return f"  {self.name}: {tail} (DIFFS)."
        return f"  {self.name}: {tail}."

    @property
    def status(self) -> int:
        return FAILURES if self.failed else DIFFS if self.diffs else CLEAN


@dataclass
class SessionSummary:
    # (directory relative to the start directory, lines), in visiting order
    blocks: list[tuple[str, list[SummaryLine]]] = field(default_factory=list)

    @property
    def status(self) -> int:
        return max((line.status for _, block in self.blocks for line in block), default=CLEAN)

    @property
    def overall(self) -> str:
        return {CLEAN: "clean", DIFFS: "diffs", FAILURES: "failures"}[self.status]

    def render_block(self, rel: str, lines: list[SummaryLine]) -> str:
        if not lines:
            return ""
        head = "" if rel == "." else f"{rel}:\n"
        return head + "".join(line.render() + "\n" for line in lines)

    def render(self) -> str:
        return "".join(self.render_block(rel, lines) for rel, lines in self.blocks)


# ---------------------------------------------------------------------------
# Directory discovery


def ancestor_dirs(directory: Path) -> list[Path]:
    """Parents carrying an OvalFile, nearest unbroken chain, root-most first."""
    chain = []
    parent = directory.parent
    while parent != directory and (parent / OVALFILE).is_file():
        chain.append(parent)
        directory, parent = parent, parent.parent
    return chain[::-1]


def walk_test_dirs(start: Path, recurse: bool) -> list[Path]:
    """The start directory, then descendants reachable through OvalFiles."""
    found = [start]
    if not recurse:
        return found
    seen = {start.resolve()}

    def visit(directory: Path) -> None:
        for child in sorted(p for p in directory.iterdir() if p.is_dir()):
            if not (child / OVALFILE).is_file() or child.resolve() in seen:
                continue
            seen.add(child.resolve())
            found.append(child)
            visit(child)

    visit(start)
    return found


@dataclass
class DirectoryPlan:
    path: Path
    rel: str
    effective: EffectiveConfig
    specs: list[ProgramSpec]


class ConfigLoader:
    """Parses each OvalFile once per invocation."""

    def __init__(self, site_defaults: ConfigNode):
        self.site_defaults = site_defaults
        self._cache: dict[Path, ConfigNode] = {}

    def node(self, directory: Path) -> ConfigNode:
        if directory not in self._cache:
            path = directory / OVALFILE
            self._cache[directory] = load_ovalfile(path) if path.is_file() else ConfigNode(None)
        return self._cache[directory]

    def chain(self, directory: Path) -> list[ConfigNode]:
        return [self.node(d) for d in ancestor_dirs(directory)] + [self.node(directory)]

    def effective(self, directory: Path) -> EffectiveConfig:
        # Programs name files of their own directory, so only the leaf's run here.
        *ancestors, leaf = self.chain(directory)
        inherited = [without_programs(n) for n in (self.site_defaults, *ancestors)]
        return merge_configs(inherited, leaf)


def requested_version(nodes: Sequence[ConfigNode]) -> str | None:
    """The root-most ``<oval version>`` of a chain; later ones only warn."""
    found = None
    for node in nodes:
        for d in node.directives:
            if isinstance(d, VersionDecl):
                if found is None:
                    found = d.version
                elif d.version != found:
                    log.warning("%s: <oval version=%s> ignored, %s is requested higher up", node.source_path, d.version, found)
    return found


def matches(spec: ProgramSpec, target: str) -> bool:
    return target in (spec.stem, spec.log_basename, spec.target)


# ---------------------------------------------------------------------------
# Site commands and notification


def discover_site_commands(ctx: SiteContext) -> dict[str, Path]:
    commands: dict[str, Path] = {}
    for directory in ctx.specialized_dirs():
        cmd_dir = directory / "Commands"
        if not cmd_dir.is_dir():
            continue
        for entry in sorted(cmd_dir.iterdir()):
            if not entry.is_file():
                continue
            if not os.access(entry, os.X_OK):
                log.warning("ignoring non-executable site command %s", entry)
                continue
            commands.setdefault(entry.stem, entry)
    return commands


def run_site_command(path: Path, args: Sequence[str], ctx: SiteContext, effective: EffectiveConfig,
                     environ: Mapping[str, str], cwd: Path) -> int:
    env = dict(environ)
    env.update(
        OVAL_DIR=str(ctx.oval_dir or ""),
        OVAL_VERSION=ctx.version,
        OVAL_FLAVOR=ctx.flavor or "",
        OVAL_CONFIG_FILES=os.pathsep.join(str(p) for p in effective.sources),
    )
    try:
        return subprocess.run([str(path), *args], env=env, cwd=cwd).returncode
    except OSError as exc:
        raise OvalError(f"cannot execute site command {path}: {exc}") from None


def notify_watchers(summary: SessionSummary, effective: EffectiveConfig,
                    runner: Callable[..., subprocess.CompletedProcess] = subprocess.run) -> bool:
    """Pipe the summary to the mail instruction once per watcher.

    Returns False when nothing was configured or any delivery failed.
    """
    instruction = effective.config("mail instruction")
    watchers = (effective.config("watchers") or "").split()
    if not instruction or not watchers:
        return False
    text = summary.render() or "  nothing to report.\n"
    text += f"overall: {summary.overall}\n"
    ok = True
    for address in watchers:
        argv = [*shlex.split(instruction), address]
        try:
            proc = runner(argv, input=text.encode(), stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
        except OSError as exc:
            log.warning("mail instruction failed for %s: %s", address, exc)
            ok = False
            continue
        if proc.returncode != 0:
            log.warning("mail instruction exited with %d for %s", proc.returncode, address)
            ok = False
    return ok


# ---------------------------------------------------------------------------
# Commands


def _exec_context(effective: EffectiveConfig, ctx: SiteContext, inv: Invocation,
                  environ: Mapping[str, str]) -> ExecContext:
    imap = resolve_interface_map(effective)
    return ExecContext(
        build_adapter=discover_adapter(imap.build_tool, ctx),
        run_adapter=discover_adapter(imap.run_tool, ctx),
        environ=environ,
        clean_aux=inv.clean_aux,
    )


def cmd_prod(specs: Sequence[ProgramSpec], ectx: ExecContext, workdir: Path,
             strict: bool = False) -> list[RunOutcome]:
    """build, run, diff every program that has a reference."""
    outcomes = []
    for spec in specs:
        if not (workdir / spec.ref_name).exists():
            if strict:
                log.warning("%s: no reference, skipped", workdir / spec.log_basename)
            continue
        outcome = RunOutcome(spec)
        outcomes.append(outcome)
        outcome.built = do_build(spec, ectx, workdir)
        if outcome.built is Status.FAILED:
            continue
        outcome.ran = do_run(spec, ectx, workdir)
        if outcome.ran is Status.FAILED:
            continue
        outcome.diffed, _ = do_diff(spec, workdir)
    return outcomes


def outcome_line(outcome: RunOutcome) -> SummaryLine:
    line = SummaryLine(outcome.spec.log_basename, [])
    if outcome.built is not Status.SKIPPED:
        line.phases.append("build")
    if outcome.built is Status.FAILED:
        line.failed = True
        return line
    line.phases.append("run")
    if outcome.ran is Status.FAILED:
        line.failed = True
        return line
    line.phases.append("diff")
    line.diffs = outcome.diffed is DiffStatus.DIFFS
    return line


def _run_directory(plan: DirectoryPlan, inv: Invocation, ctx: SiteContext,
                   environ: Mapping[str, str], details: list[str]) -> list[SummaryLine]:
    specs = plan.specs
    lines: list[SummaryLine] = []
    cmd = inv.command
    if cmd == "validate":
        for spec in specs:
            try:
                do_validate(spec, plan.path)
                lines.append(SummaryLine(spec.log_basename, ["validate"]))
            except OvalError as exc:
                log.error("%s", exc)
                lines.append(SummaryLine(spec.log_basename, ["validate"], failed=True))
        return lines
    if cmd == "diff":
        for spec in specs:
            try:
                status, report = do_diff(spec, plan.path)
            except OvalError as exc:
                log.error("%s", exc)
                lines.append(SummaryLine(spec.log_basename, ["diff"], failed=True))
                continue
            if status is DiffStatus.NO_REFERENCE:
                log.warning("%s: no reference to compare with", plan.path / spec.log_basename)
                continue
            lines.append(SummaryLine(spec.log_basename, ["diff"], diffs=status is DiffStatus.DIFFS))
            if report is not None and not report.clean:
                details.append(render_report(report).body)
        return lines
    if not specs:
        return lines
    ectx = _exec_context(plan.effective, ctx, inv, environ)
    if cmd == "prod":
        return [outcome_line(o) for o in cmd_prod(specs, ectx, plan.path, inv.strict)]
    for spec in specs:
        if cmd == "build":
            status = do_build(spec, ectx, plan.path)
            if status is not Status.SKIPPED:
                lines.append(SummaryLine(spec.log_basename, ["build"], failed=status is Status.FAILED))
        elif cmd == "run":
            status = do_run(spec, ectx, plan.path)
            lines.append(SummaryLine(spec.log_basename, ["run"], failed=status is Status.FAILED))
    return lines


def build_parser(site_commands: Sequence[str] = ()) -> argparse.ArgumentParser:
    names = sorted(set(BUILTIN_COMMANDS) | set(site_commands))
    parser = argparse.ArgumentParser(
        prog="oval",
        description="Regression-testing robot: build, run and diff test programs.",
        epilog="commands: " + ", ".join(names),
    )
    parser.add_argument("command", help="one of: " + ", ".join(names))
    parser.add_argument("targets", nargs="*", help="program names (default: all)")
    parser.add_argument("--no-recurse", action="store_true", help="do not descend into subdirectories")
    parser.add_argument("--clean-aux", action="store_true", help="remove auxiliary files after each run")
    parser.add_argument("--strict", action="store_true", help="warn about programs skipped for lack of reference")
    return parser


def session(inv: Invocation, ctx: SiteContext, loader: ConfigLoader,
            environ: Mapping[str, str], out=None) -> SessionSummary:
    """Run one built-in command over the start directory and its subdirectories."""
    out = out or sys.stdout
    start = inv.start_dir
    plans = []
    for directory in walk_test_dirs(start, recurse=not inv.no_recurse):
        effective = loader.effective(directory)
        if directory != start:
            requested_version(loader.chain(directory))
        specs = resolve_program_specs(effective, directory)
        rel = os.path.relpath(directory, start)
        plans.append(DirectoryPlan(directory, rel, effective, specs))

    if inv.targets:
        unknown = [t for t in inv.targets if not any(matches(s, t) for p in plans for s in p.specs)]
        if unknown:
            raise OvalError("not declared in any OvalFile: " + ", ".join(unknown))
        for plan in plans:
            plan.specs = [s for s in plan.specs if any(matches(s, t) for t in inv.targets)]

    summary = SessionSummary()
    for plan in plans:
        details: list[str] = []
        lines = _run_directory(plan, inv, ctx, environ, details)
        summary.blocks.append((plan.rel, lines))
        out.write(summary.render_block(plan.rel, lines))
        out.write("\n".join(details))
        out.flush()
    if inv.command == "prod":
        notify_watchers(summary, plans[0].effective)
    return summary


def dispatch(argv: Sequence[str], environ: Mapping[str, str] | None = None,
             cwd: Path | None = None, out=None) -> int:
    env = dict(os.environ if environ is None else environ)
    start = Path(cwd) if cwd is not None else Path.cwd()
    try:
        # The OvalFiles are read with the running version's grammar only to
        # find which version they ask for.
        probe = SiteContext.from_environ(env, version=RELEASE)
        loader = ConfigLoader(ConfigNode(None))
        decision = determine_version(
            RELEASE, env.get("OVAL_VERSION") or None, requested_version(loader.chain(start)),
            probe.oval_dir, environ=env,
        )
        if isinstance(decision, Delegate):
            return subprocess.run([str(decision.path), *argv], env={**env, DISPATCH_GUARD: "1"}, cwd=start).returncode

        ctx = probe
        loader.site_defaults = load_site_defaults(ctx)
        site_commands = discover_site_commands(ctx)
        parser = build_parser(site_commands)
        if argv and argv[0] in site_commands:
            if argv[0] in BUILTIN_COMMANDS:
                log.warning("site command %s overrides the built-in %r command", site_commands[argv[0]], argv[0])
            return run_site_command(site_commands[argv[0]], argv[1:], ctx, loader.effective(start), env, start)
        try:
            args = parser.parse_intermixed_args(argv)
        except SystemExit as exc:
            return CLEAN if exc.code == 0 else FAILURES
        if args.command not in BUILTIN_COMMANDS:
            parser.print_usage(sys.stderr)
            print(f"oval: unknown command {args.command!r}; available: "
                  + ", ".join(sorted(set(BUILTIN_COMMANDS) | set(site_commands))), file=sys.stderr)
            return FAILURES
        inv = Invocation(args.command, args.targets, args.clean_aux, args.no_recurse, args.strict, start)
        return session(inv, ctx, loader, env, out).status
    except OvalError as exc:
        log.error("%s", exc)
        return FAILURES


def main(argv: Sequence[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(format="oval: %(levelname)s: %(message)s", level=logging.WARNING)
    return dispatch(sys.argv[1:] if argv is None else list(argv))
