"""Oval: a regression-testing robot that builds, runs and diffs test programs."""

__version__ = "0.1.0"

#: Release identifier compared against ``OVAL_VERSION`` / ``<oval version=...>``.
RELEASE = "3_0_0"
