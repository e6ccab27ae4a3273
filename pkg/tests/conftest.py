import io
import os
import textwrap
from pathlib import Path

import pytest

from oval.cli import dispatch

SAMPLE_OVALFILE = """\
<var name="FEDERATION" value="cmsuf01">
<environment name="pt15">
  <var name="DATASET" value="eg_ele_pt15">
  <program name="Clusters.cpp">
  <program name="Electrons.cpp"
     args="-geo detailed">
</environment>
<environment name="flow">
  <var name="DATASET" value="jm_minbias">
  <program name="EnergyFlow.cpp">
</environment>
<file name=".orcarc">
  GoPersistent = 1
  MaxEvents = 500
  Random:Seeds = 0 3
</file>
<diffline expr="^OVAL:">
<diffnumber expr="^energy: (.*)$" tolerance="5%">
"""

# "Compiling" copies the stub script into place; .PHONY forces a rebuild
# every time so a perturbed stub is always picked up.
SAMPLE_MAKEFILE = """\
.PHONY: Clusters Electrons EnergyFlow
Clusters Electrons EnergyFlow:
\tcp $@.stub $@
\tchmod +x $@
"""


def electrons_stub(electrons=12, energy="29.7275"):
    return f"""\
        #!/bin/sh
        echo "                Welcome to COBRA"
        echo "args: $*"
        echo "dataset $DATASET on $FEDERATION"
        echo "OVAL: {electrons} electrons"
        echo "energy: {energy}"
        """


def write_exec(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(textwrap.dedent(text))
    path.chmod(0o755)
    return path


@pytest.fixture
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("OVAL_"):
            monkeypatch.delenv(key)
    return dict(os.environ)


@pytest.fixture
def oval(clean_env):
    """Run the CLI in-process; returns (exit status, stdout text)."""

    def run(cwd, *argv, env=None):
        out = io.StringIO()
        status = dispatch(list(argv), environ={**clean_env, **(env or {})}, cwd=Path(cwd), out=out)
        return status, out.getvalue()

    return run


@pytest.fixture
def sample_dir(tmp_path):
    d = tmp_path / "ElectronPhoton"
    d.mkdir()
    (d / "OvalFile").write_text(SAMPLE_OVALFILE)
    (d / "Makefile").write_text(SAMPLE_MAKEFILE)
    write_exec(d / "Electrons.stub", electrons_stub())
    write_exec(d / "Clusters.stub", """\
        #!/bin/sh
        echo "OVAL: 3 clusters"
        echo "energy: 101.5"
        """)
    write_exec(d / "EnergyFlow.stub", """\
        #!/bin/sh
        echo "OVAL: flow $DATASET"
        """)
    return d


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, (title, ok) in sorted(module.RESULTS.items()):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}")
