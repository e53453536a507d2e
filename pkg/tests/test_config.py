import math

import pytest

from rydcrit.config import (
    ExperimentConfig,
    bundled_config_path,
    load_config,
)
from rydcrit.errors import ConfigError
from rydcrit.evolve import JumpParams

BUNDLED = [
    "ring12_critical",
    "ring10_kz",
    "square4x4_ordinary",
    "square4x4_surface",
    "ring4_lindblad_oracle",
]


def _minimal(**over):
    raw = {
        "schema": 1,
        "name": "unit",
        "seed": 0,
        "lattice": {"geometry": "ring", "n": 8},
        "hamiltonian": {"omega_mhz": 1.6, "rb_over_a": 1.2},
    }
    raw.update(over)
    return raw


def test_minimal_config_defaults():
    cfg = ExperimentConfig.from_dict(_minimal())
    assert cfg.name == "unit"
    assert cfg.seed == 0
    assert cfg.capacity_cap >= 20
    assert cfg.omega == pytest.approx(2 * math.pi * 1.6)
    lat = cfg.build_lattice()
    assert lat.geometry == "ring" and lat.n_sites == 8
    assert cfg.jump_params() is None  # no decoherence section means off


def test_misspelled_section_names_path():
    raw = _minimal()
    raw["latice"] = raw.pop("lattice")
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert "latice" in str(exc.value)
    assert exc.value.path == "latice"


def test_unknown_nested_key_names_dotted_path():
    raw = _minimal(measurement={"shots": 50})
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert exc.value.path == "measurement.shots"


def test_section_defaults_fill_in():
    cfg = ExperimentConfig.from_dict(_minimal(measurement={}))
    m = cfg.data["measurement"]
    assert m["n_shots"] == 200
    assert m["detection"]["eta0"] == 0.980
    assert m["detection"]["enabled"] is True
    assert m["postselect"] is True


def test_bool_is_not_a_number():
    raw = _minimal()
    raw["hamiltonian"]["omega_mhz"] = True
    with pytest.raises(ConfigError, match="bool"):
        ExperimentConfig.from_dict(raw)


def test_required_and_choice_guards():
    raw = _minimal()
    del raw["seed"]
    with pytest.raises(ConfigError, match="required"):
        ExperimentConfig.from_dict(raw)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_minimal(schema=2))
    with pytest.raises(ConfigError, match=">= 0"):
        ExperimentConfig.from_dict(_minimal(seed=-1))
    raw = _minimal()
    raw["lattice"]["geometry"] = "triangle"
    with pytest.raises(ConfigError, match="one of"):
        ExperimentConfig.from_dict(raw)


def test_cross_checks():
    raw = _minimal()
    del raw["lattice"]["n"]
    with pytest.raises(ConfigError, match="needs `n`"):
        ExperimentConfig.from_dict(raw)
    raw = _minimal()
    raw["lattice"] = {"geometry": "square", "nx": 3}
    with pytest.raises(ConfigError, match="nx"):
        ExperimentConfig.from_dict(raw)
    raw = _minimal()
    raw["hamiltonian"]["c6_mhz"] = 40.0
    with pytest.raises(ConfigError, match="exactly one"):
        ExperimentConfig.from_dict(raw)
    raw = _minimal()
    raw["hamiltonian"] = {"omega_mhz": 1.6}
    with pytest.raises(ConfigError, match="exactly one"):
        ExperimentConfig.from_dict(raw)


def test_ramp_cross_checks():
    base = {"kind": "linear", "delta_start_over_omega": -1.0, "delta_end_over_omega": 2.0}
    with pytest.raises(ConfigError, match="rate_mhz_per_us"):
        ExperimentConfig.from_dict(_minimal(ramp=dict(base)))
    ok = ExperimentConfig.from_dict(_minimal(ramp={**base, "rate_mhz_per_us": 2.0}))
    assert ok.data["ramp"]["kind"] == "linear"
    adaptive = {**base, "kind": "lila-discrete"}
    with pytest.raises(ConfigError, match="total_time_us"):
        ExperimentConfig.from_dict(_minimal(ramp=adaptive))
    ExperimentConfig.from_dict(_minimal(ramp={**adaptive, "total_time_us": 2.0}))


def test_analysis_and_kz_cross_checks():
    with pytest.raises(ConfigError, match="unknown field"):
        ExperimentConfig.from_dict(_minimal(analysis={"fields": ["tau"]}))
    with pytest.raises(ConfigError, match="unknown model"):
        ExperimentConfig.from_dict(_minimal(analysis={"models": ["stretched"]}))
    with pytest.raises(ConfigError, match="unknown direction"):
        ExperimentConfig.from_dict(
            _minimal(kz={"rates_mhz_per_us": [1.0], "directions": ["up"]})
        )
    with pytest.raises(ConfigError, match="positive"):
        ExperimentConfig.from_dict(_minimal(kz={"rates_mhz_per_us": [1.0, -2.0]}))


def test_decoherence_modes():
    off = ExperimentConfig.from_dict(_minimal(decoherence={"mode": "off"}))
    assert off.jump_params() is None
    paper = ExperimentConfig.from_dict(_minimal(decoherence={"mode": "paper"}))
    assert paper.jump_params() == JumpParams.experiment_defaults()
    scaled = ExperimentConfig.from_dict(_minimal(decoherence={"mode": "scaled", "scale": 3.0}))
    assert scaled.jump_params() == JumpParams.experiment_defaults().scaled(3.0)
    custom = ExperimentConfig.from_dict(
        _minimal(
            decoherence={
                "mode": "custom",
                "custom": {"gamma_decay_per_us": 0.02, "omega_blue_mhz": 10.0,
                           "omega_ir_mhz": 5.0, "delta_int_mhz": 500.0, "gamma_e_mhz": 1.0},
            }
        )
    )
    jp = custom.jump_params()
    assert jp.gamma_decay == 0.02
    assert jp.omega_blue == pytest.approx(2 * math.pi * 10.0)
    with pytest.raises(ConfigError, match="custom block"):
        ExperimentConfig.from_dict(_minimal(decoherence={"mode": "custom"}))


def test_yaml_off_means_off(tmp_path):
    # bare `off` is YAML boolean False; the loader maps it back to the mode
    p = tmp_path / "c.yaml"
    p.write_text(
        "schema: 1\nname: offtest\nseed: 3\n"
        "lattice: {geometry: ring, n: 6}\n"
        "hamiltonian: {omega_mhz: 1.6, rb_over_a: 1.2}\n"
        "decoherence: {mode: off}\n"
    )
    cfg = ExperimentConfig.from_yaml(p)
    assert cfg.data["decoherence"]["mode"] == "off"
    assert cfg.jump_params() is None


def test_yaml_error_paths(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        ExperimentConfig.from_yaml(bad)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        ExperimentConfig.from_yaml(empty)
    with pytest.raises(ConfigError, match="cannot read|not found"):
        load_config(tmp_path / "missing" / "x.yaml")


def test_gap_grid_and_spec():
    cfg = ExperimentConfig.from_dict(
        _minimal(gap_scan={"delta_min_over_omega": -1.0, "delta_max_over_omega": 2.0, "n_points": 7})
    )
    grid = cfg.gap_grid()
    assert grid.size == 7
    assert grid[0] == pytest.approx(-cfg.omega)
    assert grid[-1] == pytest.approx(2 * cfg.omega)
    lat = cfg.build_lattice()
    spec = cfg.build_spec(lat, delta=0.5)
    assert spec.omega == pytest.approx(cfg.omega)
    assert spec.delta == 0.5


def test_basis_building():
    cfg = ExperimentConfig.from_dict(_minimal())
    lat = cfg.build_lattice()
    assert cfg.build_basis(lat).dim == 2**8
    trunc = ExperimentConfig.from_dict(_minimal(basis={"truncation": "blockade"}))
    tb = trunc.build_basis(lat)
    assert tb.dim < 2**8  # nearest-neighbour pairs excluded at rb = 1.2 a
    c6 = _minimal(basis={"truncation": "blockade"})
    c6["hamiltonian"] = {"omega_mhz": 1.6, "c6_mhz": 40.0}
    with pytest.raises(ConfigError, match="radius"):
        ExperimentConfig.from_dict(c6).build_basis(lat)


def test_hash_is_order_independent():
    a = ExperimentConfig.from_dict(_minimal())
    flipped = dict(reversed(list(_minimal().items())))
    b = ExperimentConfig.from_dict(flipped)
    assert a.config_hash() == b.config_hash()
    c = ExperimentConfig.from_dict(_minimal(seed=1))
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_load(name):
    cfg = load_config(name)
    assert cfg.name == name
    lat = cfg.build_lattice()
    assert lat.n_sites >= 4
    cfg.build_spec(lat)
    cfg.jump_params()  # may be None, must not raise


def test_bundled_config_listing():
    with pytest.raises(ConfigError, match="available"):
        bundled_config_path("nonexistent")
    for name in BUNDLED:
        assert bundled_config_path(name).exists()
