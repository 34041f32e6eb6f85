import json

import pytest
from hypothesis import given, settings, strategies as st

from sweepctl import ConfigError, dump_config, parse_config, parse_config_text
from sweepctl.config import default_config

CUSTOM = {
    "model": "custom",
    "dimensions": {"n": 2, "d": 1, "m": 1},
    "constraints": {"form": "disk", "radius": 2.0},
    "dynamics": {"form": "linear", "B": [[1.0], [0.0]]},
    "cost": {"terminal": {"form": "quadratic"}, "running": {"form": "quadratic"}},
    "horizon": 1.0,
    "x0": [0.5, 0.0],
    "r1": 0.1,
    "r2": 1.0,
}


def custom(**changes):
    raw = json.loads(json.dumps(CUSTOM))
    for key, value in changes.items():
        if value is None:
            raw.pop(key)
        else:
            raw[key] = value
    return json.dumps(raw, indent=2)


class TestDefaults:
    def test_minimal_car(self):
        cfg = parse_config_text('{"model": "builtin-car", "k": 50}')
        assert (cfg.model, cfg.k, cfg.variant) == ("builtin-car", 50, "standard")
        assert cfg.solver.gradient == "adjoint"
        assert cfg.check.source == "analytic" and cfg.check.tol == 1e-6
        assert tuple(cfg.converge.k_list) == (25, 50, 100, 200)

    def test_custom_forces_solve_source(self):
        cfg = parse_config_text(custom())
        assert cfg.check.source == "solve" and cfg.controls == "zero"

    def test_file(self, tmp_path):
        path = tmp_path / "car.json"
        path.write_text('{"model": "builtin-crowd", "case": "free"}')
        assert parse_config(path).case == "free"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "none.json")


class TestRoundTrip:
    @pytest.mark.parametrize("text", [
        '{"model": "builtin-car", "variant": "heavy-energy", "k": 30}',
        '{"model": "builtin-crowd", "case": "contact", "solver": {"max_outer": 5, "no_contact": false}}',
        custom(),
        custom(constraints={"form": "affine", "A": [[-1.0, 0.0]], "b": [1.0]}, coupling=[[1.0, -1.0]]),
    ])
    def test_canonical_text_is_a_fixed_point(self, text):
        cfg = parse_config_text(text)
        canon = dump_config(cfg)
        again = parse_config_text(canon)
        assert again == cfg
        assert dump_config(again) == canon

    @given(st.integers(2, 5000), st.sampled_from(["standard", "heavy-energy"]),
           st.floats(1e-12, 1e-2), st.lists(st.integers(2, 400), min_size=1, max_size=5, unique=True))
    @settings(max_examples=60)
    def test_generated(self, k, variant, tol, ks):
        cfg = default_config("builtin-car", k=k, variant=variant, check={"tol": tol},
                             converge={"k_list": sorted(ks)})
        assert parse_config_text(dump_config(cfg)) == cfg


class TestRejection:
    @pytest.mark.parametrize("text,field", [
        (custom(r1=0.0), "r1"),
        (custom(r1=-1.0), "r1"),
        (custom(r2=0.05), "r2"),
        (custom(dynamics=None), "dynamics"),
        (custom(dynamics={"form": "linear"}), "dynamics.B"),
        (custom(dynamics={"form": "cubic", "B": [[1.0], [0.0]]}), "dynamics.form"),
        (custom(x0=[1.0, 2.0, 3.0]), "x0"),
        (custom(constraints={"form": "disk", "radius": 1.0, "colour": "red"}), "constraints.colour"),
        ('{"model": "builtin-car", "dimensions": {"n": 2, "d": 1, "m": 1}}', "dimensions"),
        ('{"model": "builtin-car", "case": "free"}', "case"),
        ('{"model": "builtin-crowd", "variant": "standard"}', "variant"),
        ('{"model": "builtin-car", "speed": 3}', "speed"),
        ('{"k": 10}', "model"),
        ('{"model": "builtin-car", "k": 1}', "k"),
        ('{"model": "builtin-car", "k": 2.5}', "k"),
        ('{"model": "builtin-car", "solver": {"gradient": "newton"}}', "solver.gradient"),
        ('{"model": "truck"}', "model"),
    ])
    def test_named_field(self, text, field):
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        assert info.value.field == field

    def test_line_number_reported(self):
        text = '{\n  "model": "builtin-car",\n  "k": 10,\n  "bogus": 1\n}'
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        assert info.value.line == 4
        assert "line 4" in str(info.value)

    def test_duplicate_keys(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text('{"model": "builtin-car", "k": 10, "k": 20}')

    @pytest.mark.parametrize("text", ["{", "[1, 2]", "not json"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)
