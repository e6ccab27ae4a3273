"""Version dispatch, flavors and most-specialized site file lookup."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import RELEASE
from .config import OVALFILE, ConfigNode, load_ovalfile
from .errors import VersionError

log = logging.getLogger(__name__)

DISPATCH_GUARD = "OVAL_DISPATCHED"


@dataclass(frozen=True)
class SiteContext:
    """Where oval is installed and which version/flavor is active.

    ``oval_dir`` may be None when ``OVAL_DIR`` is unset; then there are no
    site files, no site adapters and no site commands.
    """

    oval_dir: Path | None
    version: str
    flavor: str | None = None

    def __post_init__(self):
        if not self.version:
            raise ValueError("version must be non-empty")
        if self.flavor == "":
            raise ValueError("flavor, when given, must be non-empty")

    @property
    def site_dir(self) -> Path | None:
        return self.oval_dir / "site" if self.oval_dir is not None else None

    @classmethod
    def from_environ(cls, environ: Mapping[str, str] | None = None, version: str | None = None) -> "SiteContext":
        env = os.environ if environ is None else environ
        oval_dir = env.get("OVAL_DIR") or None
        return cls(
            oval_dir=Path(oval_dir) if oval_dir else None,
            version=version or env.get("OVAL_VERSION") or RELEASE,
            flavor=env.get("OVAL_FLAVOR") or None,
        )

    def specialized_dirs(self) -> list[Path]:
        """Site directories from most to least specialized (adapters, commands)."""
        site = self.site_dir
        if site is None:
            return []
        dirs = [site / self.version]
        if self.flavor:
            dirs.append(site / self.flavor)
        dirs.append(site)
        return dirs


@dataclass(frozen=True)
class RunInPlace:
    pass


@dataclass(frozen=True)
class Delegate:
    path: Path


def determine_version(
    executable_version: str,
    env_requested: str | None,
    ovalfile_requested: str | None,
    oval_dir: Path | None,
    *,
    tool: str = "oval",
    environ: Mapping[str, str] | None = None,
) -> RunInPlace | Delegate:
    """Decide whether this executable serves the requested version."""
    requested = ovalfile_requested or env_requested or executable_version
    if requested == executable_version:
        return RunInPlace()
    env = os.environ if environ is None else environ
    if env.get(DISPATCH_GUARD) == "1":
        raise VersionError(
            f"version dispatch loop: already delegated once, yet version {executable_version} "
            f"was started for requested version {requested}"
        )
    if oval_dir is None:
        raise VersionError(f"version {requested} requested but OVAL_DIR is not set")
    target = oval_dir / requested / "bin" / tool
    if not target.is_file():
        raise VersionError(f"version {requested} is not installed: {target} does not exist")
    return Delegate(target)


def candidate_paths(basename: str, ctx: SiteContext) -> list[Path]:
    """The probe order for a customizable file, most specialized first."""
    site = ctx.site_dir
    if site is None:
        return []
    v, f = ctx.version, ctx.flavor
    probes: list[Path | None] = [
        site / v / f / basename if f else None,
        site / f"{basename}.{v}.{f}" if f else None,
        site / v / basename,
        site / f"{basename}.{v}",
        site / f / basename if f else None,
        site / f"{basename}.{f}" if f else None,
        site / basename,
    ]
    return [p for p in probes if p is not None]


def resolve_customizable_file(basename: str, ctx: SiteContext) -> Path | None:
    for path in candidate_paths(basename, ctx):
        if path.is_file():
            return path
    return None


def load_site_defaults(ctx: SiteContext) -> ConfigNode:
    """Parse the site OvalFile; parse errors propagate (they are fatal)."""
    path = resolve_customizable_file(OVALFILE, ctx)
    if path is None:
        return ConfigNode(None)
    log.debug("site defaults from %s", path)
    return load_ovalfile(path)
