"""Build/run interfaces and the tool adapters implementing them.

An on-disk adapter is any executable invoked as::

    <adapter> build <target-stem>
    <adapter> run <target-stem> [program args...]

in the test directory, with the program's variables exported together
with ``OVAL_TARGET`` and ``OVAL_ENVIRONMENT``. Exit status 0 is success.
The built-in ``make`` adapter runs ``make <stem>``; the built-in ``oval``
adapter builds nothing and launches the program itself.
"""

from __future__ import annotations

import os
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .config import EffectiveConfig, ProgramKind, ProgramSpec
from .errors import UnknownToolError
from .site import SiteContext

BUILD = "build"
RUN = "run"
BUILTIN_TOOLS = {"make": frozenset({BUILD}), "oval": frozenset({BUILD, RUN})}

# Exit status reported when a child cannot be launched, as a shell would.
NOT_LAUNCHED = 127


@dataclass(frozen=True)
class InterfaceMap:
    build_tool: str = "make"
    run_tool: str = "oval"


@dataclass(frozen=True)
class ToolAdapter:
    name: str
    location: Path | None  # None for built-ins
    supported_interfaces: frozenset[str] = frozenset({BUILD, RUN})

    @property
    def builtin(self) -> bool:
        return self.location is None


@dataclass(frozen=True)
class BuildResult:
    command_line: str
    exit_status: int
    output: str


@dataclass(frozen=True)
class RunResult:
    exit_status: int
    output: str


def resolve_interface_map(effective: EffectiveConfig) -> InterfaceMap:
    defaults = InterfaceMap()
    return InterfaceMap(
        build_tool=effective.config("build tool", defaults.build_tool),
        run_tool=effective.config("run tool", defaults.run_tool),
    )


def adapter_paths(name: str, ctx: SiteContext) -> list[Path]:
    paths = [d / "Interfaces" / name for d in ctx.specialized_dirs()]
    if ctx.oval_dir is not None:
        paths.append(ctx.oval_dir / ctx.version / "share" / "Interfaces" / name)
    return paths


def discover_adapter(name: str, ctx: SiteContext) -> ToolAdapter:
    """First hit among site, shipped and built-in adapters wins."""
    probed = adapter_paths(name, ctx)
    for path in probed:
        if path.is_file():
            return ToolAdapter(name, path)
    if name in BUILTIN_TOOLS:
        return ToolAdapter(name, None, BUILTIN_TOOLS[name])
    raise UnknownToolError(name, probed)


def child_environment(spec: ProgramSpec, environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """Ambient environment overlaid with the program's variables."""
    env = dict(os.environ if environ is None else environ)
    env.update(spec.variables)
    env["OVAL_TARGET"] = spec.target
    env["OVAL_ENVIRONMENT"] = spec.environment or ""
    return env


def _execute(argv: list[str], workdir: Path, env: Mapping[str, str]) -> tuple[int, str]:
    try:
        proc = subprocess.run(
            argv,
            cwd=workdir,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
    except OSError as exc:
        return NOT_LAUNCHED, f"oval: cannot execute {argv[0]}: {exc.strerror or exc}\n"
    return proc.returncode, proc.stdout.decode("utf-8", errors="replace")


def _unsupported(adapter: ToolAdapter, interface: str) -> str:
    return f"oval: tool {adapter.name!r} does not implement the {interface} interface\n"


def build_command(adapter: ToolAdapter, spec: ProgramSpec) -> list[str]:
    if adapter.builtin:
        return ["make", spec.stem] if adapter.name == "make" else []
    return [str(adapter.location), BUILD, spec.stem]


def adapter_build(
    adapter: ToolAdapter, spec: ProgramSpec, workdir: Path, environ: Mapping[str, str] | None = None
) -> BuildResult:
    if BUILD not in adapter.supported_interfaces:
        return BuildResult("", NOT_LAUNCHED, _unsupported(adapter, BUILD))
    argv = build_command(adapter, spec)
    if not argv:
        return BuildResult("", 0, "")
    status, output = _execute(argv, workdir, child_environment(spec, environ))
    return BuildResult(shlex.join(argv), status, output)


def run_command(adapter: ToolAdapter, spec: ProgramSpec) -> list[str]:
    if not adapter.builtin:
        return [str(adapter.location), RUN, spec.stem, *spec.args]
    if spec.kind is ProgramKind.SOURCE:
        program = spec.stem
    else:
        program = spec.target
    if not os.path.dirname(program):
        program = f"./{program}"
    return [program, *spec.args]


def adapter_run(
    adapter: ToolAdapter, spec: ProgramSpec, workdir: Path, environ: Mapping[str, str] | None = None
) -> RunResult:
    if RUN not in adapter.supported_interfaces:
        return RunResult(NOT_LAUNCHED, _unsupported(adapter, RUN))
    status, output = _execute(run_command(adapter, spec), workdir, child_environment(spec, environ))
    return RunResult(status, output)
