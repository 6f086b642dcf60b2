"""Windowing, standardization, penalized loss and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .model import Params, ResidualMlpConfig, forward, forward_var, init
from .regularizer import RegularizerSpec, penalty


class TrainingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lag: int = 5
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int = 100
    seed: int = 0
    standardize: bool = True
    val_fraction: float = 0.2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"invalid training settings: lr={self.learning_rate}, "
                              f"epochs={self.epochs}, batch_size={self.batch_size}")
        if not 0.0 <= self.val_fraction <= 0.5:
            raise ConfigError("val_fraction must be in [0, 0.5]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# flat run-config files

CONFIG_KEYS = ("dim", "lag", "hidden", "n_residual", "dropout", "activation", "regularizer",
               "lambda", "n_proj", "lr", "epochs", "batch_size", "seed", "standardize", "val_fraction")

_KEY_TYPES = {"dim": int, "lag": int, "hidden": int, "n_residual": int, "dropout": float,
              "activation": str, "regularizer": str, "lambda": float, "n_proj": int, "lr": float,
              "epochs": int, "batch_size": int, "seed": int, "standardize": bool, "val_fraction": float}

_DEFAULTS = {"hidden": 50, "n_residual": 0, "dropout": 0.0, "activation": "relu",
             "regularizer": "fro_random_projection", "lambda": 0.0, "n_proj": 1, "lr": 1e-3,
             "epochs": 2000, "batch_size": 100, "seed": 0, "standardize": True, "val_fraction": 0.2}


def _coerce(key, value):
    kind = _KEY_TYPES[key]
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"config key {key!r}: expected boolean, got {value!r}")
    if kind is str:
        return str(value)
    try:
        num = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: expected a number, got {value!r}") from None
    if kind is int:
        if num != int(num):
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
        return int(num)
    return num


def parse_run_config(doc: dict) -> dict:
    """Validate a flat key-value run config, filling defaults."""
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = dict(_DEFAULTS)
    for k, v in doc.items():
        out[k] = _coerce(k, v)
    for required in ("dim", "lag"):
        if required not in out:
            raise ConfigError(f"config is missing {required!r}")
    return out


def load_run_config(path) -> dict:
    """Read a JSON object or ``key = value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    else:
        doc = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            doc[k] = v.strip('"').strip("'")
    return parse_run_config(doc)


def build_configs(run: dict) -> tuple[ResidualMlpConfig, TrainConfig]:
    try:
        mc = ResidualMlpConfig(dim=run["dim"], lag=run["lag"], hidden=run["hidden"],
                               n_residual=run["n_residual"], dropout_rate=run["dropout"],
                               activation=run["activation"])
        reg = RegularizerSpec(kind=run["regularizer"], lam=run["lambda"], n_proj=run["n_proj"])
        tc = TrainConfig(lag=run["lag"], regularizer=reg, learning_rate=run["lr"], epochs=run["epochs"],
                         batch_size=run["batch_size"], seed=run["seed"], standardize=run["standardize"],
                         val_fraction=run["val_fraction"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return mc, tc


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class Standardization:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.means) / self.stds

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.stds + self.means

    def as_dict(self) -> dict:
        return {"means": self.means, "stds": self.stds}


def standardize(values: np.ndarray):
    """Per-column z-score.  Constant columns get std 1 (they become 0)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise ValueError("standardize needs at least 2 rows")
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    st = Standardization(means, stds)
    return st.apply(values), st


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # M x (D * lag)
    targets: np.ndarray  # M x D
    lag: int

    @property
    def M(self) -> int:
        return self.inputs.shape[0]

    def split(self, val_fraction: float):
        """Chronological split; validation is the last ceil(val_fraction * M) rows."""
        n_val = math.ceil(val_fraction * self.M)
        cut = self.M - n_val
        return (WindowedDataset(self.inputs[:cut], self.targets[:cut], self.lag),
                WindowedDataset(self.inputs[cut:], self.targets[cut:], self.lag))


def window(values: np.ndarray, lag: int) -> WindowedDataset:
    values = np.asarray(values, dtype=np.float64)
    T, D = values.shape
    if T <= lag:
        raise ValueError(f"series length {T} must exceed lag {lag}")
    M = T - lag
    # inputs[m, i*lag + k] = values[m + k, i], k = 0 is the oldest lag
    idx = np.arange(M)[:, None] + np.arange(lag)[None, :]
    win = values[idx]  # M x lag x D
    inputs = np.ascontiguousarray(win.transpose(0, 2, 1).reshape(M, D * lag))
    return WindowedDataset(inputs, values[lag:].copy(), lag)


# ---------------------------------------------------------------------------
# loss and optimizer


def mse(pred: ad.Var, target: ad.Var) -> ad.Var:
    return ad.mean(ad.square(pred - target))


def loss(pv: dict, config: ResidualMlpConfig, x: ad.Var, y: ad.Var, reg: RegularizerSpec,
         training: bool = False, rng: Optional[np.random.Generator] = None):
    """MSE over batch and variables plus lambda times the Jacobian penalty.

    Returns ``(total, mse, penalty)`` Vars.
    """
    z = forward_var(pv, config, x, training=training, rng=rng)
    fit = mse(z, y)
    if not reg.active:
        return fit, fit, None
    pen = penalty(reg, z, x, rng if rng is not None else np.random.default_rng(0))
    return fit + ad.scale(pen, reg.lam), fit, pen


class Adam:
    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, params: Params, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: dict) -> None:
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_mse_original: list = field(default_factory=list)
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {k: [float(v) for v in getattr(self, k)] for k in
             ("train_loss", "train_mse", "penalty", "val_loss", "val_mse_original")}
        d["means"] = None if self.means is None else [float(v) for v in self.means]
        d["stds"] = None if self.stds is None else [float(v) for v in self.stds]
        return d


def prepare(values: np.ndarray, lag: int, do_standardize: bool):
    if do_standardize:
        z, st = standardize(values)
    else:
        z = np.asarray(values, dtype=np.float64)
        st = Standardization(np.zeros(z.shape[1]), np.ones(z.shape[1]))
    return window(z, lag), st


def evaluate_mse(params: Params, config: ResidualMlpConfig, data: WindowedDataset,
                 st: Optional[Standardization] = None) -> float:
    """Eval-mode MSE; in original units when ``st`` is given."""
    if data.M == 0:
        return float("nan")
    pred = forward(params, config, data.inputs)
    target = data.targets
    if st is not None:
        pred, target = pred * st.stds, target * st.stds
    return float(np.mean((pred - target) ** 2))


def train_step(params: Params, config: ResidualMlpConfig, xb: np.ndarray, yb: np.ndarray,
               reg: RegularizerSpec, rng: np.random.Generator):
    """One fresh tape: loss, double backward, gradients as arrays."""
    tape = ad.Tape()
    names = list(params)
    pv = {k: tape.leaf(params[k], requires_grad=True) for k in names}
    x = tape.leaf(xb, requires_grad=reg.active)
    y = tape.const(yb)
    total, fit, pen = loss(pv, config, x, y, reg, training=True, rng=rng)
    grads = ad.backward(total, [pv[k] for k in names])
    return (float(total.value), float(fit.value), 0.0 if pen is None else float(pen.value),
            {k: g.value for k, g in zip(names, grads)})


def train(values: np.ndarray, model_config: ResidualMlpConfig, cfg: TrainConfig, log=None):
    """Fit the forecaster on the chronological training part of ``values``.

    Returns ``(params, report)``; fully determined by ``cfg.seed``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[1] != model_config.dim or cfg.lag != model_config.lag:
        raise ConfigError(f"data has D={values.shape[1]}, lag={cfg.lag}; model expects "
                          f"D={model_config.dim}, lag={model_config.lag}")
    data, st = prepare(values, cfg.lag, cfg.standardize)
    train_set, val_set = data.split(cfg.val_fraction)
    if train_set.M == 0:
        raise ConfigError("no training windows after the validation split")

    ss = np.random.SeedSequence(cfg.seed)
    init_seed, loop_seed = ss.spawn(2)
    params = init(model_config, int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(loop_seed)
    if cfg.optimizer == "adam":
        opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam)
    else:
        opt = SGD(params, cfg.learning_rate)

    report = TrainReport(means=st.means, stds=st.stds)
    M = train_set.M
    bs = min(cfg.batch_size, M)
    for epoch in range(cfg.epochs):
        order = rng.permutation(M)
        tot = fit_sum = pen_sum = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, M, bs)):
            idx = order[start:start + bs]
            t_loss, t_fit, t_pen, grads = train_step(params, model_config, train_set.inputs[idx],
                                                     train_set.targets[idx], cfg.regularizer, rng)
            if not math.isfinite(t_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            opt.step(params, grads)
            tot += t_loss
            fit_sum += t_fit
            pen_sum += t_pen
            n_batches += 1
        report.train_loss.append(tot / n_batches)
        report.train_mse.append(fit_sum / n_batches)
        report.penalty.append(pen_sum / n_batches)
        if val_set.M:
            report.val_loss.append(evaluate_mse(params, model_config, val_set))
            report.val_mse_original.append(evaluate_mse(params, model_config, val_set, st))
        if log is not None and (epoch + 1) % max(1, cfg.epochs // 10) == 0:
            val = f" val {report.val_loss[-1]:.5f}" if report.val_loss else ""
            log(f"epoch {epoch + 1}/{cfg.epochs} train {report.train_loss[-1]:.5f}{val}")
    return params, report
