"""Synthetic benchmarks with exact ground truth, plus dataset CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

VAR_BURN_IN = 200


class DataError(ValueError):
    pass


@dataclass
class TimeSeries:
    values: np.ndarray  # T x D, ascending time

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"time series must be T x D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("time series contains non-finite values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass
class GroundTruthGraph:
    """``summary[i, j]``: x_i causes x_j.  ``full[a - 1, i, j]``: at lag a."""

    full: np.ndarray
    summary: Optional[np.ndarray] = None

    def __post_init__(self):
        self.full = np.asarray(self.full, dtype=bool)
        derived = self.full.any(axis=0)
        if self.summary is None:
            self.summary = derived
        self.summary = np.asarray(self.summary, dtype=bool)
        if not np.array_equal(self.summary, derived):
            raise DataError("summary graph is not the OR of the full-time graph")

    @property
    def lag(self) -> int:
        return self.full.shape[0]


# ---------------------------------------------------------------------------
# VAR


@dataclass
class VarSpec:
    coefs: np.ndarray  # tau x D x D, coefs[a-1, i, j] = effect of x_i(t-a) on x_j(t)
    noise_std: float = 1.0

    @property
    def D(self) -> int:
        return self.coefs.shape[1]

    @property
    def tau(self) -> int:
        return self.coefs.shape[0]


def companion_matrix(coefs: np.ndarray) -> np.ndarray:
    """Companion form of x(t) = sum_a coefs[a-1]^T x(t-a)."""
    tau, d, _ = coefs.shape
    comp = np.zeros((d * tau, d * tau))
    for a in range(tau):
        comp[:d, a * d:(a + 1) * d] = coefs[a].T
    comp[d:, :-d] = np.eye(d * (tau - 1))
    return comp


def spectral_radius(coefs: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coefs)))))


def var_random_coeffs(D: int, tau: int, parents_per_var: int = 2, coeff_low: float = 0.3,
                      coeff_high: float = 0.5, seed: int = 0, noise_std: float = 1.0,
                      max_radius: float = 0.95) -> VarSpec:
    """Sparse stationary VAR: a lag-1 self edge plus random parents per variable.

    Each extra parent sits at one uniform lag in 1..tau.  If the companion
    spectral radius exceeds ``max_radius``, all coefficients are shrunk by
    the largest common factor that brings it to ``max_radius`` (bisection).
    """
    if not 0 <= parents_per_var <= D - 1:
        raise DataError(f"parents_per_var must be in [0, {D - 1}], got {parents_per_var}")
    if tau < 1:
        raise DataError("tau must be >= 1")
    rng = np.random.default_rng(seed)
    coefs = np.zeros((tau, D, D))

    def draw():
        return rng.uniform(coeff_low, coeff_high) * rng.choice([-1.0, 1.0])

    for j in range(D):
        coefs[0, j, j] = draw()
        others = [i for i in range(D) if i != j]
        for i in rng.choice(others, size=parents_per_var, replace=False):
            coefs[rng.integers(tau), i, j] = draw()

    if spectral_radius(coefs) > max_radius:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if spectral_radius(coefs * mid) <= max_radius:
                lo = mid
            else:
                hi = mid
        coefs = coefs * lo
    return VarSpec(coefs=coefs, noise_std=noise_std)


def var_truth(spec: VarSpec) -> GroundTruthGraph:
    return GroundTruthGraph(full=spec.coefs != 0)


def var_simulate(spec: VarSpec, T: int, seed: int = 0, burn_in: int = VAR_BURN_IN):
    tau, D = spec.tau, spec.D
    if T <= tau:
        raise DataError(f"T={T} must exceed tau={tau}")
    rng = np.random.default_rng(seed)
    n = tau + burn_in + T
    x = np.zeros((n, D))
    x[:tau] = rng.standard_normal((tau, D))
    noise = rng.standard_normal((n, D)) * spec.noise_std
    # lagged[a] multiplies x(t - a - 1) by coefs[a]^T
    for t in range(tau, n):
        acc = noise[t].copy()
        for a in range(tau):
            acc += x[t - a - 1] @ spec.coefs[a]
        x[t] = acc
        if not np.all(np.abs(acc) < 1e6):
            raise DataError(f"VAR trajectory diverged at step {t} (|x| > 1e6); coefficients are non-stationary")
    return TimeSeries(x[tau + burn_in:]), var_truth(spec)


# ---------------------------------------------------------------------------
# Lorenz-96


@dataclass
class Lorenz96Spec:
    D: int = 10
    F: float = 10.0
    dt: float = 0.01
    subsample: int = 5
    burn_in: int = 1000
    obs_noise_std: float = 0.0
    init_noise_std: float = 0.1

    def __post_init__(self):
        if self.D < 4:
            raise DataError("Lorenz-96 needs D >= 4")
        if self.dt <= 0 or self.subsample < 1 or self.burn_in < 0:
            raise DataError(f"invalid integrator settings in {self}")


def lorenz96_deriv(x: np.ndarray, F: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + F


def rk4_step(x: np.ndarray, F: float, dt: float) -> np.ndarray:
    k1 = lorenz96_deriv(x, F)
    k2 = lorenz96_deriv(x + 0.5 * dt * k1, F)
    k3 = lorenz96_deriv(x + 0.5 * dt * k2, F)
    k4 = lorenz96_deriv(x + dt * k3, F)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def lorenz96_truth(D: int, lag: int) -> GroundTruthGraph:
    """Parents of j are j-2, j-1, j, j+1 (mod D), marked at every lag 1..lag."""
    summary = np.zeros((D, D), dtype=bool)
    for j in range(D):
        for off in (-2, -1, 0, 1):
            summary[(j + off) % D, j] = True
    return GroundTruthGraph(full=np.broadcast_to(summary, (lag, D, D)).copy())


def lorenz96_simulate(spec: Lorenz96Spec, T: int, seed: int = 0, lag: int = 5):
    rng = np.random.default_rng(seed)
    x = spec.F * np.ones(spec.D) + spec.init_noise_std * rng.standard_normal(spec.D)
    for step in range(spec.burn_in):
        x = rk4_step(x, spec.F, spec.dt)
    out = np.empty((T, spec.D))
    for t in range(T):
        for _ in range(spec.subsample):
            x = rk4_step(x, spec.F, spec.dt)
        if not np.all(np.abs(x) < 1e6):
            raise DataError(f"Lorenz-96 integration diverged at observation {t}")
        out[t] = x
    if spec.obs_noise_std > 0:
        out = out + spec.obs_noise_std * rng.standard_normal(out.shape)
    return TimeSeries(out), lorenz96_truth(spec.D, lag)


# ---------------------------------------------------------------------------
# CSV I/O


def _header(D: int) -> list[str]:
    return [f"x{i + 1}" for i in range(D)]


def write_dataset(directory, series: TimeSeries, truth: Optional[GroundTruthGraph] = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = _header(series.D)
    with open(d / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])
    if truth is None:
        return
    with open(d / "truth_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in truth.summary:
            w.writerow([int(v) for v in row])
    with open(d / "truth_full.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cause", "effect", "lag"])
        for a, i, j in zip(*np.nonzero(truth.full)):
            w.writerow([i + 1, j + 1, a + 1])


def read_series(path) -> TimeSeries:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric entry") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite entry")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeries(np.array(rows))


def read_truth(directory, D: int, lag: Optional[int] = None) -> Optional[GroundTruthGraph]:
    d = Path(directory)
    full_path, summary_path = d / "truth_full.csv", d / "truth_summary.csv"
    if not full_path.exists():
        return None
    edges = []
    with open(full_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["cause", "effect", "lag"]:
            raise DataError(f"{full_path}: header must be cause,effect,lag")
        for lineno, row in enumerate(reader, start=2):
            try:
                i, j, a = int(row["cause"]), int(row["effect"]), int(row["lag"])
            except (TypeError, ValueError):
                raise DataError(f"{full_path}:{lineno}: malformed edge") from None
            if not (1 <= i <= D and 1 <= j <= D and a >= 1):
                raise DataError(f"{full_path}:{lineno}: edge out of range")
            edges.append((i, j, a))
    depth = max([a for _, _, a in edges], default=1)
    if lag is not None:
        depth = max(depth, lag)
    full = np.zeros((depth, D, D), dtype=bool)
    for i, j, a in edges:
        full[a - 1, i - 1, j - 1] = True
    summary = None
    if summary_path.exists():
        m = _read_matrix(summary_path, D)
        summary = m != 0
    return GroundTruthGraph(full=full, summary=summary)


def _read_matrix(path, D: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != D:
                raise DataError(f"{path}:{lineno}: expected {D} columns, got {len(row)}")
            rows.append([float(v) for v in row])
    if len(rows) != D:
        raise DataError(f"{path}: expected {D} rows, got {len(rows)}")
    return np.array(rows)


def read_dataset(path):
    """Load ``data.csv`` (a file, or a directory containing it) and any truth files."""
    p = Path(path)
    if p.is_dir():
        directory, data_file = p, p / "data.csv"
    else:
        directory, data_file = p.parent, p
    if not data_file.exists():
        raise DataError(f"{data_file}: not found")
    series = read_series(data_file)
    return series, read_truth(directory, series.D)
