import logging
from decimal import Decimal
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SAMPLE_OVALFILE
from oval.config import (
    AuxFilePart,
    ConfigDecl,
    ConfigNode,
    EffectiveConfig,
    EnvironmentBlock,
    LineRule,
    NumberRule,
    OptionsDecl,
    ProgramDecl,
    ProgramKind,
    ProgramSpec,
    VarDecl,
    VersionDecl,
    assemble_aux_file,
    classify_target,
    merge_configs,
    parse_ovalfile,
    parse_tolerance,
    resolve_program_specs,
    serialize_ovalfile,
)
from oval.errors import ParseError


def parse(text):
    return parse_ovalfile(text, "OvalFile")


def kinds(directives):
    return [type(d).__name__ for d in directives]


class TestParse:
    def test_program_list(self):
        node = parse('<program name="Clusters.cpp">\n')
        assert node.directives == (ProgramDecl("Clusters.cpp"),)

    def test_empty(self):
        node = parse("")
        assert node.directives == () and node.environments == ()

    def test_sample_runtime_listing(self):
        node = parse(SAMPLE_OVALFILE)
        assert kinds(node.directives) == ["VarDecl", "AuxFilePart", "LineRule", "NumberRule"]
        pt15, flow = node.environments
        assert pt15.name == "pt15"
        assert pt15.directives == (
            VarDecl("DATASET", "eg_ele_pt15"),
            ProgramDecl("Clusters.cpp"),
            ProgramDecl("Electrons.cpp", ("-geo", "detailed")),
        )
        assert flow.directives == (VarDecl("DATASET", "jm_minbias"), ProgramDecl("EnergyFlow.cpp"))

    def test_file_block_is_verbatim_and_dedented(self):
        node = parse('<file name=".orcarc">\n  GoPersistent = 1\n  <not a tag>\n</file>\n')
        assert node.directives == (AuxFilePart(".orcarc", "GoPersistent = 1\n<not a tag>"),)

    @pytest.mark.parametrize("tol", ["5", "5%", "5.0%", " 5.0 % "])
    def test_tolerance_spellings(self, tol):
        node = parse(f'<diffnumber expr="^e: (.*)$" tolerance="{tol}">')
        assert node.directives[0].tolerance_percent == Decimal(5)

    def test_site_directives(self):
        node = parse(
            '<options command="expr" value="-v">\n'
            '<config name="build tool" value="scram">\n'
            '<oval version="2_1_0">\n'
        )
        assert node.directives == (
            OptionsDecl("expr", "-v"),
            ConfigDecl("build tool", "scram"),
            VersionDecl("2_1_0"),
        )

    def test_unknown_tag_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            node = parse('<frobnicate x="1">\n<program name="a.cpp">')
        assert node.directives == (ProgramDecl("a.cpp"),)
        assert "unknown tag <frobnicate>" in caplog.text

    def test_comments_are_skipped(self):
        assert parse('<!-- <program name="x.cpp"> -->').directives == ()

    @pytest.mark.parametrize(
        "text, line, message",
        [
            # A tag left open before the next one, as in hand-written files.
            ('<program name="a.cpp">\n<program name="b.cpp"\n<program name="c.cpp">', 2, "malformed tag"),
            ('<program name="a.cpp"', 1, "no closing '>'"),
            ('<diffnumber expr="^energy: (.*)$"\n  tolerance="5\n', 1, "unterminated attribute"),
            ('<environment name="a">\n<program name="x.cpp">\n', 1, "unterminated <environment"),
            ('<file name="f">\nabc\n', 1, "unterminated <file>"),
            ('<environment name="a">\n</environment>\n<environment name="a">\n</environment>', 3, "duplicate environment"),
            ('<environment name="a">\n<environment name="b">', 2, "nested"),
            ('<diffnumber expr="^(a)(b)$" tolerance="5">', 1, "exactly 1 capture group"),
            ('<diffnumber expr="^a$" tolerance="5">', 1, "exactly 1 capture group"),
            ('<diffline expr="(?<=x)y">', 1, "lookbehind"),
            ('<diffline expr="(">', 1, "invalid regular expression"),
            ('<diffnumber expr="(.*)" tolerance="-1">', 1, "invalid tolerance"),
            ('<var name="X">', 1, "lacks attribute"),
            ('</environment>', 1, "unexpected"),
        ],
    )
    def test_errors_carry_location(self, text, line, message):
        with pytest.raises(ParseError) as info:
            parse(text)
        assert info.value.line == line
        assert message in str(info.value)
        assert str(info.value).startswith("OvalFile:")

    def test_parse_is_atomic(self):
        # Nothing partial escapes: the error is raised, no node returned.
        with pytest.raises(ParseError):
            parse('<program name="a.cpp">\n<program name="b.cpp"')

    def test_top_level_only_directives_in_environment_are_skipped(self, caplog):
        node = parse('<environment name="e">\n<config name="a" value="b">\n</environment>')
        assert node.environments[0].directives == ()
        assert "only honored at top level" in caplog.text


# -- round trip -------------------------------------------------------------

names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_.]{0,8}", fullmatch=True)
values = st.text(st.characters(min_codepoint=32, max_codepoint=126, blacklist_characters="\"'<>"), max_size=12)
content_lines = st.from_regex(r"[A-Za-z0-9=:.]([A-Za-z0-9=:. ]{0,10}[A-Za-z0-9=:.])?", fullmatch=True)
directive = st.one_of(
    st.builds(ProgramDecl, names, st.lists(st.from_regex(r"-?[a-z0-9]{1,5}", fullmatch=True), max_size=3).map(tuple)),
    st.builds(VarDecl, names, values),
    st.builds(AuxFilePart, names, st.lists(content_lines, min_size=1, max_size=4).map("\n".join)),
    st.builds(LineRule, st.sampled_from(["^OVAL:", "x+y", "^a|b$", "[0-9]+"])),
    st.builds(NumberRule, st.sampled_from(["^e: (.*)$", "v=([0-9.]+)"]),
              st.decimals(min_value=0, max_value=100, places=2)),
    st.builds(ConfigDecl, names, values),
)


@st.composite
def nodes(draw):
    top = draw(st.lists(directive, max_size=6))
    env_names = draw(st.lists(names, max_size=3, unique=True))
    envs = [EnvironmentBlock(n, tuple(draw(st.lists(directive.filter(lambda d: not isinstance(d, ConfigDecl)), max_size=4))))
            for n in env_names]
    return ConfigNode(Path("OvalFile"), tuple(top), tuple(envs))


@settings(max_examples=200)
@given(nodes())
def test_serialize_parse_round_trip(node):
    again = parse_ovalfile(serialize_ovalfile(node), "OvalFile")
    # Content lines never start with blanks here, so dedent is the identity.
    assert again == node


# -- merging ------------------------------------------------------------------


def test_merge_nearest_wins():
    a = ConfigNode(None, (VarDecl("FEDERATION", "a"),))
    b = ConfigNode(None, (VarDecl("FEDERATION", "b"),))
    assert merge_configs([a], b).variables == {"FEDERATION": "b"}


def test_merge_rules_concatenate_root_to_leaf():
    a = ConfigNode(None, (LineRule("^OVAL:"),))
    b = ConfigNode(None, (NumberRule("^e: (.*)$", Decimal(5)),))
    merged = merge_configs([a], b)
    assert [d for d in merged.directives] == [LineRule("^OVAL:"), NumberRule("^e: (.*)$", Decimal(5))]


def test_merge_identity():
    x = parse(SAMPLE_OVALFILE)
    merged = merge_configs([], x)
    assert merged.directives == x.directives
    assert merged.environments == x.environments


def test_merge_environments_by_name():
    a = ConfigNode(None, (), (EnvironmentBlock("e", (VarDecl("V", "1"), LineRule("a"))),))
    b = ConfigNode(None, (), (EnvironmentBlock("e", (VarDecl("V", "2"), LineRule("b"))), EnvironmentBlock("f")))
    merged = merge_configs([a], b)
    assert merged.environments == (
        EnvironmentBlock("e", (LineRule("a"), VarDecl("V", "2"), LineRule("b"))),
        EnvironmentBlock("f"),
    )


# -- program resolution ----------------------------------------------------------


def test_resolve_sample_ovalfile():
    specs = resolve_program_specs(merge_configs([], parse(SAMPLE_OVALFILE)))
    assert [(s.stem, s.environment) for s in specs] == [
        ("Clusters", "pt15"), ("Electrons", "pt15"), ("EnergyFlow", "flow")]
    clusters, electrons, flow = specs
    assert clusters.variables == {"FEDERATION": "cmsuf01", "DATASET": "eg_ele_pt15"}
    assert electrons.args == ("-geo", "detailed")
    assert flow.variables["DATASET"] == "jm_minbias"
    assert all(s.kind is ProgramKind.SOURCE for s in specs)
    assert [s.log_basename for s in specs] == ["Clusters", "Electrons", "EnergyFlow"]


def test_same_program_in_two_environments_gets_distinct_logs():
    node = parse(
        '<environment name="a"><program name="P.cpp"></environment>\n'
        '<environment name="b"><program name="P.cpp"></environment>\n'
    )
    specs = resolve_program_specs(merge_configs([], node))
    assert [s.log_basename for s in specs] == ["P.a", "P.b"]
    assert [s.occurrence_index for s in specs] == [1, 2]


def test_single_top_level_program():
    (spec,) = resolve_program_specs(merge_configs([], parse('<program name="Clusters.cpp">')))
    assert spec.occurrence_index == 1
    assert spec.log_basename == "Clusters"
    assert spec.environment is None


def test_repeated_names_within_one_scope_are_indexed():
    node = parse('<program name="P.cpp" args="1">\n<program name="P.cpp" args="2">\n'
                 '<environment name="e"><program name="P.cpp"><program name="P.cpp"></environment>')
    names = [s.log_basename for s in resolve_program_specs(merge_configs([], node))]
    assert names == ["P.1", "P.2", "P.e.1", "P.e.2"]


def test_top_level_program_does_not_see_environment_scope():
    node = parse('<var name="A" value="1"><diffline expr="top"><program name="t.cpp">\n'
                 '<environment name="e"><var name="A" value="2"><var name="B" value="3">'
                 '<diffline expr="env"><program name="u.cpp"></environment>')
    top, env = resolve_program_specs(merge_configs([], node))
    assert top.variables == {"A": "1"} and top.rules == (LineRule("top"),)
    assert env.variables == {"A": "2", "B": "3"}
    assert env.rules == (LineRule("top"), LineRule("env"))


def test_classify_targets(tmp_path, caplog):
    (tmp_path / "run.sh").write_text("#!/bin/sh\necho hi\n")
    (tmp_path / "run.sh").chmod(0o755)
    (tmp_path / "prog").write_bytes(b"\x7fELF")
    (tmp_path / "prog").chmod(0o755)
    assert classify_target("x.C", tmp_path) is ProgramKind.SOURCE
    assert classify_target("run.sh", tmp_path) is ProgramKind.SCRIPT
    assert classify_target("prog", tmp_path) is ProgramKind.BINARY
    with caplog.at_level(logging.WARNING):
        assert classify_target("mystery", tmp_path) is ProgramKind.SOURCE
    assert "cannot classify" in caplog.text


# -- auxiliary files -----------------------------------------------------------------


def test_aux_file_example():
    (spec,) = resolve_program_specs(merge_configs([], parse(
        '<program name="Electrons.cpp">\n<file name=".orcarc">\n'
        '  GoPersistent = 1\n  MaxEvents = 500\n  Random:Seeds = 0 3\n</file>')))
    assert assemble_aux_file(".orcarc", spec) == "GoPersistent = 1\nMaxEvents = 500\nRandom:Seeds = 0 3\n"


def test_aux_parts_concatenate_top_level_first():
    node = parse('<file name="f">B0</file>\n<environment name="e">'
                 '<program name="p.cpp"><file name="f">\nB1\n</file></environment>\n<file name="f">A</file>')
    (spec,) = resolve_program_specs(merge_configs([], node))
    assert assemble_aux_file("f", spec) == "B0\nA\nB1\n"


def test_aux_concatenation_order_two_parts():
    spec = ProgramSpec("p", ProgramKind.SOURCE, aux_parts={"f": ("A", "B")})
    assert assemble_aux_file("f", spec) == "A\nB\n"


def test_parse_tolerance_rejects_garbage():
    with pytest.raises(ValueError):
        parse_tolerance("five")


def test_effective_accessors():
    eff = EffectiveConfig((ConfigDecl("build tool", "scram"), OptionsDecl("expr", "-v"), VersionDecl("1")))
    assert eff.config("build tool") == "scram"
    assert eff.config("run tool", "oval") == "oval"
    assert eff.options == {"expr": "-v"}
    assert eff.version == "1"
