"""Black-box identification of the EPS with three-layer tanh perceptrons.

Networks are trained with Levenberg-Marquardt on normalised data; inputs
and targets are mapped linearly into [-1, 1] using the training ranges.
A model bank holds one identified model per health or fault mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .eps_plant import EPS_CLASSES, FaultKind, TelemetrySample, telemetry_arrays
from .errors import CompletenessError, ConfigError, DataError, QualityGateError, ShapeError

MU_MAX = 1e10
MAX_VAL_FAIL = 6
HIST_BINS = 30


@dataclass(frozen=True)
class TrainConfig:
    n_hidden: int = 10
    max_epochs: int = 300
    mu_init: float = 1e-3
    mu_factor: float = 10.0
    goal_mse: float = 1e-10
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def validate(self) -> None:
        if int(self.n_hidden) != self.n_hidden or self.n_hidden < 1:
            raise ConfigError("n_hidden", "must be an integer >= 1")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 0:
            raise ConfigError("max_epochs", "must be an integer >= 0")
        if not self.mu_init > 0:
            raise ConfigError("mu_init", "must be > 0")
        if not self.mu_factor > 1:
            raise ConfigError("mu_factor", "must be > 1")
        if not self.goal_mse >= 0:
            raise ConfigError("goal_mse", "must be >= 0")
        if len(self.split) != 3 or any(not (0 < f < 1) for f in self.split):
            raise ConfigError("split", "needs three fractions in (0, 1)")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split", f"fractions must sum to 1, got {sum(self.split)!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", "must be an unsigned integer")


@dataclass
class MlpRegressor:
    """tanh hidden layer, linear output layer, min-max scaling on both ends.

    Scaling rows are ``(offset, gain)`` with ``scaled = (x - offset) * gain``.
    """

    hidden_weights: np.ndarray  # n_hidden x (n_in + 1), last column is the bias
    output_weights: np.ndarray  # n_out x (n_hidden + 1)
    input_scaling: np.ndarray  # n_in x 2
    output_scaling: np.ndarray  # n_out x 2

    @property
    def n_in(self) -> int:
        return self.hidden_weights.shape[1] - 1

    @property
    def n_hidden(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.output_weights.shape[0]

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_scaling[:, 0]) * self.input_scaling[:, 1]

    def unscale_outputs(self, y: np.ndarray) -> np.ndarray:
        return y / self.output_scaling[:, 1] + self.output_scaling[:, 0]

    def weight_vector(self) -> np.ndarray:
        return np.concatenate([self.hidden_weights.ravel(), self.output_weights.ravel()])

    def with_weights(self, w: np.ndarray) -> "MlpRegressor":
        n_h = self.hidden_weights.size
        return MlpRegressor(
            hidden_weights=w[:n_h].reshape(self.hidden_weights.shape).copy(),
            output_weights=w[n_h:].reshape(self.output_weights.shape).copy(),
            input_scaling=self.input_scaling,
            output_scaling=self.output_scaling,
        )


@dataclass
class FitReport:
    """Fit statistics per output column, computed on e = y - y_hat."""

    mse: np.ndarray
    rmse: np.ndarray
    correlation_r: list[float | None]  # None where y or y_hat has zero variance
    error_mean_mu: np.ndarray
    error_variance_delta: np.ndarray
    hist_edges: list[np.ndarray]
    hist_counts: list[np.ndarray]
    n: int

    def min_correlation(self) -> float:
        vals = [r for r in self.correlation_r if r is not None]
        return min(vals) if len(vals) == len(self.correlation_r) else float("nan")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mse": [float(v) for v in self.mse],
            "rmse": [float(v) for v in self.rmse],
            "correlation_r": [None if r is None else float(r) for r in self.correlation_r],
            "error_mean_mu": [float(v) for v in self.error_mean_mu],
            "error_variance_delta": [float(v) for v in self.error_variance_delta],
        }


@dataclass
class TrainResult:
    model: MlpRegressor
    report: FitReport
    sse_history: list[float]  # training SSE (normalised units) after each accepted step
    epochs: int
    stop_reason: str
    train_outputs: np.ndarray  # model outputs on the training split, original units
    split_indices: tuple[np.ndarray, np.ndarray, np.ndarray]


# --------------------------------------------------------------------------
# Forward pass and Jacobian
# --------------------------------------------------------------------------


def _as_2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _forward_scaled(model: MlpRegressor, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = xs @ model.hidden_weights[:, :-1].T + model.hidden_weights[:, -1]
    h = np.tanh(a)
    y = h @ model.output_weights[:, :-1].T + model.output_weights[:, -1]
    return y, h


def predict(model: MlpRegressor, inputs: np.ndarray) -> np.ndarray:
    x = _as_2d(inputs)
    if x.shape[1] != model.n_in:
        raise ShapeError(f"model expects {model.n_in} inputs, got {x.shape[1]}")
    y, _ = _forward_scaled(model, model.scale_inputs(x))
    return model.unscale_outputs(y)


def input_gradient(model: MlpRegressor, x: np.ndarray) -> np.ndarray:
    """d(output)/d(input) at one point in original units, shape n_out x n_in."""
    x = np.asarray(x, dtype=float)
    xs = model.scale_inputs(x[None, :])
    _, h = _forward_scaled(model, xs)
    d_hidden = (1.0 - h[0] ** 2)[:, None] * model.hidden_weights[:, :-1]  # H x n_in
    d_scaled = model.output_weights[:, :-1] @ d_hidden  # O x n_in
    return d_scaled * model.input_scaling[:, 1][None, :] / model.output_scaling[:, 1][:, None]


def weight_jacobian(model: MlpRegressor, xs: np.ndarray) -> np.ndarray:
    """d(scaled output)/d(weights), shape (N * n_out) x n_weights, sample-major rows."""
    n = xs.shape[0]
    n_out, n_hid = model.n_out, model.n_hidden
    _, h = _forward_scaled(model, xs)
    x_b = np.hstack([xs, np.ones((n, 1))])
    h_b = np.hstack([h, np.ones((n, 1))])
    dh = 1.0 - h**2  # N x H

    # hidden block: W_o[o, i] * (1 - h_i^2) * x_j
    back = dh[:, None, :] * model.output_weights[None, :, :-1]  # N x O x H
    j_hidden = back[:, :, :, None] * x_b[:, None, None, :]  # N x O x H x (n_in+1)
    # output block: delta(o, o') * h_j
    j_out = np.zeros((n, n_out, n_out, n_hid + 1))
    idx = np.arange(n_out)
    j_out[:, idx, idx, :] = h_b[:, None, :]
    return np.concatenate(
        [j_hidden.reshape(n, n_out, -1), j_out.reshape(n, n_out, -1)], axis=2
    ).reshape(n * n_out, -1)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _minmax_scaling(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(axis=0), a.max(axis=0)
    span = hi - lo
    gain = np.where(span > 0, 2.0 / np.where(span > 0, span, 1.0), 1.0)
    return np.column_stack([(lo + hi) / 2.0, gain])


def split_indices(n: int, split: tuple[float, float, float], rng: np.random.Generator):
    perm = rng.permutation(n)
    n_train = max(1, int(round(split[0] * n)))
    n_val = max(1, int(round(split[1] * n)))
    n_train = min(n_train, n - 2)
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    if test.size == 0:
        test = val
    return train, val, test


def _init_weights(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
    # Nguyen-Widrow style: spread hidden units over the [-1, 1] input box
    w = rng.uniform(-1.0, 1.0, size=(n_hidden, n_in))
    w *= 0.7 * n_hidden ** (1.0 / n_in) / np.linalg.norm(w, axis=1, keepdims=True)
    b = rng.uniform(-1.0, 1.0, size=(n_hidden, 1)) * 0.7 * n_hidden ** (1.0 / n_in)
    hidden = np.hstack([w, b])
    output = rng.uniform(-0.5, 0.5, size=(n_out, n_hidden + 1))
    return hidden, output


def train_lm(inputs: np.ndarray, targets: np.ndarray, config: TrainConfig) -> TrainResult:
    """Fit an MLP by Levenberg-Marquardt with validation early stopping.

    Each step solves (J'J + mu I) dw = J'e. A step that lowers the training
    SSE is accepted and mu shrinks by ``mu_factor``; otherwise mu grows and
    the step is retried. Training ends at ``max_epochs``, ``goal_mse``, mu
    above 1e10, or six consecutive accepted steps without a new validation
    minimum. The weights with the lowest validation SSE are returned.
    """
    config.validate()
    x = _as_2d(inputs)
    t = _as_2d(targets)
    if x.shape[0] != t.shape[0]:
        raise ShapeError(f"{x.shape[0]} input rows vs {t.shape[0]} target rows")
    if x.shape[0] < 10:
        raise DataError("train_lm needs at least 10 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise DataError("inputs and targets must be finite")

    rng = np.random.default_rng(config.seed)
    tr, va, te = split_indices(x.shape[0], config.split, rng)
    hidden, output = _init_weights(x.shape[1], config.n_hidden, t.shape[1], rng)
    model = MlpRegressor(hidden, output, _minmax_scaling(x[tr]), _minmax_scaling(t[tr]))

    xs = model.scale_inputs(x)
    ts = (t - model.output_scaling[:, 0]) * model.output_scaling[:, 1]
    x_tr, t_tr = xs[tr], ts[tr]
    x_va, t_va = xs[va], ts[va]
    n_w = model.weight_vector().size
    const_out = model.output_scaling[:, 0] * 0 + (t[tr].max(axis=0) == t[tr].min(axis=0))

    def sse(m: MlpRegressor, xa: np.ndarray, ta: np.ndarray) -> float:
        y, _ = _forward_scaled(m, xa)
        return float(np.sum((ta - y) ** 2))

    mu = config.mu_init
    cur_sse = sse(model, x_tr, t_tr)
    best_val = sse(model, x_va, t_va)
    best_model = model
    val_fail = 0
    history = [cur_sse]
    epochs = 0
    stop = "max_epochs"
    n_rows = t_tr.size

    while epochs < config.max_epochs:
        if cur_sse / n_rows <= config.goal_mse:
            stop = "goal"
            break
        y_tr, _ = _forward_scaled(model, x_tr)
        e = (t_tr - y_tr).ravel()
        jac = weight_jacobian(model, x_tr)
        jtj = jac.T @ jac
        jte = jac.T @ e
        w = model.weight_vector()
        accepted = False
        while mu <= MU_MAX:
            try:
                dw = np.linalg.solve(jtj + mu * np.eye(n_w), jte)
            except np.linalg.LinAlgError:
                mu *= config.mu_factor
                continue
            trial = model.with_weights(w + dw)
            trial_sse = sse(trial, x_tr, t_tr)
            if trial_sse < cur_sse:
                model, cur_sse = trial, trial_sse
                mu /= config.mu_factor
                accepted = True
                break
            mu *= config.mu_factor
        if not accepted:
            stop = "mu_max"
            break
        epochs += 1
        history.append(cur_sse)
        val = sse(model, x_va, t_va)
        if val < best_val:
            best_val, best_model, val_fail = val, model, 0
        else:
            val_fail += 1
            if val_fail >= MAX_VAL_FAIL:
                stop = "validation"
                break
    else:
        if cur_sse / n_rows <= config.goal_mse:
            stop = "goal"

    # a constant target is represented exactly by the output bias alone
    final = best_model
    if np.any(const_out):
        ow = final.output_weights.copy()
        ow[const_out.astype(bool), :] = 0.0
        final = MlpRegressor(final.hidden_weights, ow, final.input_scaling, final.output_scaling)

    y_test = predict(final, x[te])
    return TrainResult(
        model=final,
        report=fit_report(t[te], y_test),
        sse_history=history,
        epochs=epochs,
        stop_reason=stop,
        train_outputs=predict(final, x[tr]),
        split_indices=(tr, va, te),
    )


# --------------------------------------------------------------------------
# Fit statistics
# --------------------------------------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if denom == 0.0:
        return None
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def fit_report(y: np.ndarray, y_hat: np.ndarray) -> FitReport:
    y, y_hat = _as_2d(y), _as_2d(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if y.shape[0] < 1:
        raise DataError("fit_report needs at least one sample")
    e = y - y_hat
    mse = np.mean(e**2, axis=0)
    ddof = 1 if e.shape[0] > 1 else 0
    edges, counts = [], []
    for col in e.T:
        c, ed = np.histogram(col, bins=HIST_BINS, range=(col.min(), col.max()) if col.max() > col.min() else None)
        edges.append(ed)
        counts.append(c)
    return FitReport(
        mse=mse,
        rmse=np.sqrt(mse),
        correlation_r=[_pearson(y[:, j], y_hat[:, j]) for j in range(y.shape[1])],
        error_mean_mu=e.mean(axis=0),
        error_variance_delta=e.var(axis=0, ddof=ddof),
        hist_edges=edges,
        hist_counts=counts,
        n=y.shape[0],
    )


# --------------------------------------------------------------------------
# Model bank
# --------------------------------------------------------------------------

EPS_FAULTS = EPS_CLASSES[1:]
PV_FAULTS = (FaultKind.PvLineLine, FaultKind.PvOpenCircuit)
MIN_BANK_SAMPLES = 500
HEALTHY_GATE = 0.95


@dataclass
class ModelBank:
    """Identified models; ``eps_models`` follows the residual order of the EPS task."""

    healthy_system: MlpRegressor
    healthy_pv: MlpRegressor
    fault_models: dict[FaultKind, MlpRegressor]
    pv_fault_models: dict[FaultKind, MlpRegressor]
    reports: dict[str, FitReport] = field(default_factory=dict)

    def eps_models(self) -> list[MlpRegressor]:
        return [self.healthy_system] + [self.fault_models[f] for f in EPS_FAULTS]

    def named_models(self) -> dict[str, MlpRegressor]:
        out = {"system_Healthy": self.healthy_system}
        out.update({f"system_{f.value}": m for f, m in self.fault_models.items()})
        out["pv_Healthy"] = self.healthy_pv
        out.update({f"pv_{f.value}": m for f, m in self.pv_fault_models.items()})
        return out


def bank_inputs_targets(samples: list[TelemetrySample]) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (irradiance, temperature); targets (i_load, v_pv, i_pv)."""
    a = telemetry_arrays(samples)
    x = np.column_stack([a["irradiance_w_m2"], a["panel_temp_c"]])
    y = np.column_stack([a["i_load_a"], a["v_pv_v"], a["i_pv_a"]])
    return x, y


def build_model_bank(
    datasets: Mapping[FaultKind, tuple[np.ndarray, np.ndarray]], config: TrainConfig
) -> ModelBank:
    """Train the bank from per-mode ``(inputs, targets)``.

    Targets carry three columns (i_load, v_pv, i_pv). System models map
    inputs to i_load; PV models map inputs to (v_pv, i_pv).
    """
    for f in FaultKind:
        if f not in datasets:
            raise CompletenessError(f"missing dataset for fault {f.value}")
        if _as_2d(datasets[f][0]).shape[0] < MIN_BANK_SAMPLES:
            raise CompletenessError(f"dataset for {f.value} has fewer than {MIN_BANK_SAMPLES} samples")

    plan: list[tuple[str, FaultKind, slice]] = [("system_Healthy", FaultKind.Healthy, slice(0, 1))]
    plan += [(f"system_{f.value}", f, slice(0, 1)) for f in EPS_FAULTS]
    plan += [("pv_Healthy", FaultKind.Healthy, slice(1, 3))]
    plan += [(f"pv_{f.value}", f, slice(1, 3)) for f in PV_FAULTS]

    models: dict[str, MlpRegressor] = {}
    reports: dict[str, FitReport] = {}
    for index, (name, fault, cols) in enumerate(plan):
        x, y = datasets[fault]
        seed = int(np.random.SeedSequence([int(config.seed), index]).generate_state(1)[0])
        sub = TrainConfig(**{**config.__dict__, "seed": seed})
        result = train_lm(x, _as_2d(y)[:, cols], sub)
        models[name] = result.model
        reports[name] = result.report

    for name in ("system_Healthy", "pv_Healthy"):
        r = reports[name].min_correlation()
        if not r >= HEALTHY_GATE:
            raise QualityGateError(f"model bank quality gate failed: {name} correlation {r:.4f} < {HEALTHY_GATE}")

    return ModelBank(
        healthy_system=models["system_Healthy"],
        healthy_pv=models["pv_Healthy"],
        fault_models={f: models[f"system_{f.value}"] for f in EPS_FAULTS},
        pv_fault_models={f: models[f"pv_{f.value}"] for f in PV_FAULTS},
        reports=reports,
    )


# --------------------------------------------------------------------------
# Text serialisation
# --------------------------------------------------------------------------


def dumps_model(model: MlpRegressor) -> str:
    lines = [f"mlp v1 {model.n_in} {model.n_hidden} {model.n_out}"]
    for block in (model.input_scaling, model.output_scaling, model.hidden_weights, model.output_weights):
        for row in block:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> MlpRegressor:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["mlp", "v1"]:
        raise DataError(f"not an mlp v1 model: {lines[0]!r}")
    n_in, n_hid, n_out = (int(v) for v in head[2:])
    rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1:]]
    expected = n_in + n_out + n_hid + n_out
    if len(rows) != expected:
        raise DataError(f"expected {expected} data rows, got {len(rows)}")
    in_s = np.vstack(rows[:n_in])
    out_s = np.vstack(rows[n_in : n_in + n_out])
    hid = np.vstack(rows[n_in + n_out : n_in + n_out + n_hid])
    out = np.vstack(rows[n_in + n_out + n_hid :])
    if in_s.shape != (n_in, 2) or out_s.shape != (n_out, 2) or hid.shape != (n_hid, n_in + 1) or out.shape != (n_out, n_hid + 1):
        raise DataError("model rows have inconsistent widths")
    return MlpRegressor(hid, out, in_s, out_s)


def save_model(path: str | Path, model: MlpRegressor) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path: str | Path) -> MlpRegressor:
    return loads_model(Path(path).read_text())
