import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfdd.eps_plant import FaultKind, healthy_full_scale
from epsfdd.errors import CompletenessError, ConfigError, DataError, ShapeError
from epsfdd.sysid import (
    HIST_BINS,
    MlpRegressor,
    TrainConfig,
    build_model_bank,
    dumps_model,
    fit_report,
    input_gradient,
    loads_model,
    predict,
    train_lm,
    weight_jacobian,
)


def random_model(rng, n_in=2, n_hidden=4, n_out=2):
    return MlpRegressor(
        hidden_weights=rng.normal(size=(n_hidden, n_in + 1)),
        output_weights=rng.normal(size=(n_out, n_hidden + 1)),
        input_scaling=np.column_stack([rng.normal(size=n_in), rng.uniform(0.5, 2.0, n_in)]),
        output_scaling=np.column_stack([rng.normal(size=n_out), rng.uniform(0.5, 2.0, n_out)]),
    )


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs,field",
        [({"split": (0.7, 0.2, 0.2)}, "split"), ({"split": (1.0, 0.0, 0.0)}, "split"),
         ({"mu_init": 0.0}, "mu_init"), ({"mu_factor": 1.0}, "mu_factor"), ({"n_hidden": 0}, "n_hidden")],
    )
    def test_invalid(self, kwargs, field):
        with pytest.raises(ConfigError) as err:
            TrainConfig(**kwargs).validate()
        assert err.value.field == field


class TestTrainLm:
    def test_linear_target_matches_least_squares(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-2.0, 3.0, size=(400, 2))
        y = 1.5 * x[:, 0] - 0.7 * x[:, 1] + 0.3
        result = train_lm(x, y, TrainConfig(n_hidden=3, max_epochs=3000))
        assert result.report.mse[0] <= 1e-8
        a = np.column_stack([x, np.ones(len(x))])
        coef = np.linalg.lstsq(a, y, rcond=None)[0]
        gap = predict(result.model, x)[:, 0] - a @ coef
        assert np.sqrt(np.mean(gap**2)) <= 1e-3

    def test_constant_target(self):
        x = np.random.default_rng(2).normal(size=(100, 2))
        result = train_lm(x, np.full(100, 2.5), TrainConfig())
        assert np.all(predict(result.model, x) == 2.5)
        assert result.report.mse[0] <= 1e-12

    def test_sse_strictly_decreasing(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=(200, 2))
        y = np.sin(3 * x[:, 0]) * x[:, 1]
        hist = train_lm(x, y, TrainConfig(max_epochs=50)).sse_history
        assert np.all(np.diff(hist) < 0)

    def test_train_outputs_match_predict(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, size=(120, 2))
        result = train_lm(x, x[:, :1] ** 2, TrainConfig(max_epochs=20))
        tr = result.split_indices[0]
        assert np.max(np.abs(predict(result.model, x[tr]) - result.train_outputs)) <= 1e-12

    def test_split_partitions_samples(self):
        x = np.random.default_rng(5).normal(size=(100, 1))
        tr, va, te = train_lm(x, x, TrainConfig(max_epochs=2)).split_indices
        assert (tr.size, va.size, te.size) == (70, 15, 15)
        assert np.array_equal(np.sort(np.concatenate([tr, va, te])), np.arange(100))

    def test_bit_reproducible(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=(150, 2))
        y = np.tanh(x @ np.array([1.0, -2.0]))
        a = train_lm(x, y, TrainConfig(seed=9, max_epochs=30))
        b = train_lm(x, y, TrainConfig(seed=9, max_epochs=30))
        assert dumps_model(a.model) == dumps_model(b.model)

    def test_errors(self):
        x = np.zeros((20, 2))
        with pytest.raises(DataError):
            train_lm(x[:5], x[:5, 0], TrainConfig())
        with pytest.raises(ShapeError):
            train_lm(x, np.zeros(19), TrainConfig())
        bad = x.copy()
        bad[3, 1] = np.nan
        with pytest.raises(DataError):
            train_lm(bad, np.zeros(20), TrainConfig())


class TestPredict:
    def test_zero_network_gives_offset(self):
        m = MlpRegressor(np.zeros((3, 3)), np.zeros((2, 4)), np.array([[1.0, 2.0], [0.0, 1.0]]),
                         np.array([[0.4, 3.0], [-1.5, 0.5]]))
        out = predict(m, np.random.default_rng(0).normal(size=(5, 2)))
        assert np.all(out == np.array([0.4, -1.5]))

    def test_shape_mismatch(self):
        m = random_model(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            predict(m, np.zeros((4, 3)))

    def test_input_gradient_vs_central_difference(self):
        rng = np.random.default_rng(7)
        m = random_model(rng, n_in=3, n_hidden=5, n_out=2)
        h = 1e-5
        for _ in range(10):
            x = rng.normal(size=3)
            analytic = input_gradient(m, x)
            numeric = np.empty_like(analytic)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                numeric[:, j] = (predict(m, (x + e)[None, :])[0] - predict(m, (x - e)[None, :])[0]) / (2 * h)
            assert np.allclose(analytic, numeric, rtol=1e-6, atol=1e-9)

    def test_weight_jacobian_vs_central_difference(self):
        rng = np.random.default_rng(8)
        m = random_model(rng, n_in=1, n_hidden=1, n_out=1)  # 4 weights
        xs = rng.normal(size=(6, 1))
        jac = weight_jacobian(m, xs)
        w = m.weight_vector()
        h = 1e-6
        for k in range(w.size):
            e = np.zeros_like(w)
            e[k] = h
            up = m.with_weights(w + e)
            dn = m.with_weights(w - e)
            f = lambda mm: (np.tanh(xs @ mm.hidden_weights[:, :-1].T + mm.hidden_weights[:, -1])
                            @ mm.output_weights[:, :-1].T + mm.output_weights[:, -1]).ravel()
            assert np.allclose(jac[:, k], (f(up) - f(dn)) / (2 * h), rtol=1e-5, atol=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_scaling_round_trip(self, values):
        m = MlpRegressor(np.zeros((1, 2)), np.zeros((1, 2)), np.array([[3.0, 0.25]]), np.array([[3.0, 0.25]]))
        x = np.array(values)
        back = m.unscale_outputs(m.scale_inputs(x[:, None]))[:, 0]
        assert np.allclose(back, x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))


class TestFitReport:
    def test_identical(self):
        y = np.array([1.0, 2.0, 4.0])
        r = fit_report(y, y)
        assert r.mse[0] == 0 and r.error_mean_mu[0] == 0 and r.error_variance_delta[0] == 0
        assert r.correlation_r[0] == pytest.approx(1.0)

    def test_hand_arithmetic(self):
        r = fit_report(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert r.mse[0] == 1.0 and r.rmse[0] == 1.0
        assert r.correlation_r[0] == pytest.approx(-1.0)

    def test_zero_variance_marker(self):
        r = fit_report(np.ones(5), np.arange(5.0))
        assert r.correlation_r == [None]

    def test_error_variance_oracle(self):
        rng = np.random.default_rng(10)
        y = rng.normal(size=10_000)
        r = fit_report(y, y + rng.normal(0.0, 0.1, size=y.size))
        assert r.error_variance_delta[0] == pytest.approx(0.01, rel=0.2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=50))
    def test_invariants(self, pairs):
        y, yh = np.array(pairs).T
        r = fit_report(y, yh)
        assert r.mse[0] == np.mean((y - yh) ** 2)
        assert r.rmse[0] == np.sqrt(r.mse[0])
        assert r.hist_counts[0].sum() == y.size
        assert len(r.hist_counts[0]) == HIST_BINS

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            fit_report(np.zeros(3), np.zeros(4))


class TestSerialization:
    def test_round_trip_exact(self):
        m = random_model(np.random.default_rng(12), n_in=2, n_hidden=7, n_out=3)
        text = dumps_model(m)
        assert text.splitlines()[0] == "mlp v1 2 7 3"
        back = loads_model(text)
        for name in ("hidden_weights", "output_weights", "input_scaling", "output_scaling"):
            assert np.array_equal(getattr(back, name), getattr(m, name))
        assert dumps_model(back) == text

    def test_rejects_bad_header(self):
        with pytest.raises(DataError):
            loads_model("mlp v2 1 1 1\n")


class TestModelBank:
    def test_missing_dataset_named(self):
        x = np.zeros((600, 2))
        data = {f: (x, np.zeros((600, 3))) for f in FaultKind if f is not FaultKind.RegIgbtOpen}
        with pytest.raises(CompletenessError, match="RegIgbtOpen"):
            build_model_bank(data, TrainConfig())

    def test_default_bank(self, default_bank):
        assert len(default_bank.named_models()) == 8
        assert len(default_bank.eps_models()) == 5
        for name, rep in default_bank.reports.items():
            assert rep.min_correlation() >= 0.95, name
        assert default_bank.reports["system_Healthy"].correlation_r[0] >= 0.96

    def test_healthy_pv_current_normalised_mse(self, default_cfg, default_bank):
        # normalised by the healthy full-scale current; sensor noise alone is 1e-4 here
        _, i_fs, _ = healthy_full_scale(default_cfg.plant)
        assert default_bank.reports["pv_Healthy"].mse[1] / i_fs**2 <= 1e-4

    def test_deterministic(self, default_cfg, default_telemetry, default_bank):
        from epsfdd.pipeline import train_bank

        again = train_bank(default_cfg, default_telemetry)
        for name, rep in default_bank.reports.items():
            assert np.array_equal(rep.mse, again.reports[name].mse)
