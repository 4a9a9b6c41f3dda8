import pytest

from dacart.config import (
    bundled_config_text,
    bundled_configs,
    resolve_config,
    scenario_from_text,
    scenario_to_text,
)
from dacart.errors import UserError
from dacart.simlab import Scenario, SelectionSpec


def test_bundled_configs_load():
    names = bundled_configs()
    assert "restricted_x1.cfg" in names and len(names) >= 6
    for name in names:
        sc = scenario_from_text(bundled_config_text(name))
        assert sc.name == name[:-4]
        assert sc.replications >= 1 and sc.models


def test_restricted_x1_fields():
    sc = resolve_config("restricted_x1")
    assert sc.selection == SelectionSpec("restricted", "x1")
    assert sc.master_seed == 20240501
    assert sc.ew1_features == ("X1",)
    assert sc.tree_features == "all"


def test_overrides_apply_in_order():
    sc = resolve_config("restricted_x1", ["scenario.replications=2", "scenario.n_source=300",
                                          "tree.max_depth=5", "scenario.replications=3"])
    assert sc.replications == 3 and sc.n_source == 300 and sc.tree.max_depth == 5


def test_unknown_section_and_field_are_named():
    with pytest.raises(UserError, match="bogus"):
        scenario_from_text("[bogus]\nx = 1\n")
    with pytest.raises(UserError, match="scenario.size"):
        scenario_from_text("[scenario]\nsize = 1\n")
    with pytest.raises(UserError, match="scenario.n_source"):
        scenario_from_text("[scenario]\nn_source = many\n")
    with pytest.raises(UserError):
        resolve_config("restricted_x1", ["replications=2"])
    with pytest.raises(UserError, match="no bundled config"):
        resolve_config("nonexistent_scenario")


def test_invalid_values_rejected_by_scenario():
    with pytest.raises(UserError):
        scenario_from_text("[weights]\ntrunc = 0.9, 0.1\n")
    with pytest.raises(UserError):
        scenario_from_text("[selection]\nmechanism = sideways\n")


def test_round_trip():
    for name in bundled_configs():
        sc = scenario_from_text(bundled_config_text(name))
        assert scenario_from_text(scenario_to_text(sc)) == sc
    sc = Scenario(n_source=123, threshold=0.7, tree_features="selected")
    assert scenario_from_text(scenario_to_text(sc)) == sc


def test_config_file_path(tmp_path):
    f = tmp_path / "s.cfg"
    f.write_text("[scenario]\nname = mine\nreplications = 4\n")
    sc = resolve_config(str(f))
    assert sc.name == "mine" and sc.replications == 4
