import pytest
from hypothesis import given, settings, strategies as st

import queuenet
from queuenet.engine import ControllerConfig, ScenarioConfig
from queuenet.errors import ConfigError, DanglingLink, EmptyPhase, RoutingMassExceeded
from queuenet.scenario import load_scenario, parse_scenario, serialize_scenario
from queuenet.topology import GridSpec

MINIMAL = """
[topology]
node X
source a
link a X
"""

THREE_NODE = """\
[topology]
node X
node Y
node Z
source a
link a X travel=3
link X Y travel=2
link X Z travel=2

[routing]
route a X Y 0.7
route a X Z 0.5
"""


def test_minimal_single_node_uses_defaults():
    cfg = parse_scenario(MINIMAL)
    assert cfg.controller == ControllerConfig()
    assert cfg.horizon == 3600 and cfg.seed == 0 and cfg.burn_in == 0 and not cfg.trace
    assert cfg.topology.links[0].travel == 10
    assert cfg.demand.entries == [] and cfg.demand.scale == 1.0


def test_defaults_are_echoed_into_metadata():
    meta = parse_scenario(MINIMAL).metadata()
    for key in ("controller", "changeover", "min_green", "max_green", "plan_horizon", "gap",
                "temperature", "coordinated", "slots", "seed", "demand_scale", "topology", "classes"):
        assert key in meta
    assert meta["changeover"] == "5" and meta["max_green"] == "55"


def test_routing_mass_over_one_reports_line():
    with pytest.raises(RoutingMassExceeded) as e:
        parse_scenario(THREE_NODE)
    assert e.value.line == 12
    assert str(e.value).startswith("line 12:")


@pytest.mark.parametrize("text, exc, line", [
    ("[topology]\nnode X\nlink a X\n", DanglingLink, 3),
    ("[topology]\nnode X\nsource a\nlink a X\n[phases]\nphase X P \n", ConfigError, 6),
    ("[topology]\nnode X\nsource a\nlink a X\n[phases]\nphase X P b\n", DanglingLink, 6),
    ("[topology]\nnode X\n[bogus]\n", ConfigError, 3),
    ("node X\n", ConfigError, 1),
    ("[topology]\nnode X\nsource a\nlink a X travel=x\n", ConfigError, 4),
    ("[topology]\nnode X\nsource a\nlink a X\n\n[controller]\nkind fast\n", ConfigError, 7),
    ("[topology]\nnode X\nsource a\nlink a X\n[controller]\nmin_green 0\n", ConfigError, 6),
    ("[topology]\nnode X\nsource a\nlink a X\n[demand]\nsegment a->X 10 5 100\n", ConfigError, 6),
    ("[topology]\ngrid rows=2 cols=2\nnode X\n", ConfigError, 2),
    ("[topology]\nnode X\n[topology]\n", ConfigError, 3),
])
def test_errors_carry_line_numbers(text, exc, line):
    with pytest.raises(exc) as e:
        parse_scenario(text)
    assert e.value.line == line


def test_empty_phase_is_rejected():
    text = "[topology]\nnode X\nsource a\nlink a X\n[phases]\nphase X P ,\n"
    with pytest.raises(EmptyPhase):
        parse_scenario(text)


def test_comments_and_blank_lines_ignored():
    text = "# header\n\n[topology]   # the network\nnode X  # one node\nsource a\nlink a X travel=4\n"
    assert parse_scenario(text).topology.links[0].travel == 4


def test_explicit_round_trip():
    text = THREE_NODE.replace("0.5", "0.3") + """
[demand]
scale 2
class car share=0.75 processing=1
class truck share=0.25 processing=2
segment a->X 0 100 360
segment * 100 200 720

[controller]
kind sp
temperature 0.5
coordinated false

[run]
horizon 200
seed 7
trace true
"""
    cfg = parse_scenario(text)
    out = serialize_scenario(cfg)
    assert parse_scenario(out) == cfg
    assert serialize_scenario(parse_scenario(out)) == out


@pytest.mark.parametrize("name", ["grid_pm_rush", "two_queue"])
def test_bundled_scenarios_round_trip(name):
    cfg = load_scenario(queuenet.bundled_scenario(name))
    assert parse_scenario(serialize_scenario(cfg)) == cfg


def test_bundled_grid_is_the_main_experiment():
    cfg = load_scenario(queuenet.bundled_scenario("grid_pm_rush"))
    assert isinstance(cfg.topology, GridSpec)
    assert (cfg.topology.rows, cfg.topology.cols, cfg.topology.travel) == (4, 4, 10)
    assert [e.rate for e in cfg.demand.entries] == [236.0, 354.0, 528.0]
    assert all(e.link is None for e in cfg.demand.entries)
    assert cfg.demand.scale > 1


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["sdc", "bp", "sp"]), co=st.integers(0, 9), mg=st.integers(1, 9),
       extra=st.integers(0, 60), temp=st.floats(0.05, 20, allow_nan=False), coord=st.booleans(),
       scale=st.floats(0, 50, allow_nan=False), seed=st.integers(0, 2**31), rows=st.integers(1, 4))
def test_round_trip_property(kind, co, mg, extra, temp, coord, scale, seed, rows):
    from queuenet.traffic import DemandEntry, DemandSpec
    cfg = ScenarioConfig(GridSpec(rows, 2), DemandSpec([DemandEntry(None, 0, 50, 100.0)], scale=scale),
                         ControllerConfig(kind, co, mg, mg + extra, temperature=temp, coordinated=coord),
                         50, seed)
    assert parse_scenario(serialize_scenario(cfg)) == cfg
