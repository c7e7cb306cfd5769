import pytest

from epsfdd.config import derive_seed, load_config, resolve
from epsfdd.errors import ConfigError


class TestResolve:
    def test_defaults(self):
        cfg = resolve()
        assert cfg.run.n_samples == 2001 and cfg.run.dt_s == 60.0
        assert cfg.train.n_hidden == 10 and cfg.classify.k_folds == 5

    def test_layers_in_order(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nn_samples = 700  # inline comment\n[plant]\nload_resistance_ohm = 20\n")
        cfg = load_config(path, {"run": {"n_samples": "900"}})
        assert cfg.run.n_samples == 900
        assert cfg.plant.load_resistance_ohm == 20.0

    def test_stage_seeds_derived_from_root(self):
        cfg = resolve(overrides={"run": {"seed": "5"}})
        assert cfg.orbit.seed == derive_seed(5, "orbit")
        assert len({cfg.orbit.seed, cfg.plant.seed, cfg.train.seed, cfg.classify.seed}) == 4

    def test_tuple_and_none_values(self):
        cfg = resolve({"plant": {"measurement_noise_sigma": "0.1, 0.01, 0.01"}, "classify": {"dt_max_depth": "none"}})
        assert cfg.plant.measurement_noise_sigma == (0.1, 0.01, 0.01)
        assert cfg.classify.dt_max_depth is None

    def test_hash_tracks_values(self):
        assert resolve().config_hash() == resolve().config_hash()
        assert resolve().config_hash() != resolve({"train": {"n_hidden": "8"}}).config_hash()

    @pytest.mark.parametrize(
        "values,field",
        [({"plant": {"bogus": "1"}}, "plant.bogus"), ({"train": {"n_hidden": "ten"}}, "train.n_hidden"),
         ({"orbit": {"eclipse_fraction": "0.9"}}, "eclipse_fraction"), ({"nope": {}}, "nope")],
    )
    def test_errors_name_field(self, values, field):
        with pytest.raises(ConfigError) as err:
            resolve(values)
        assert err.value.field == field
