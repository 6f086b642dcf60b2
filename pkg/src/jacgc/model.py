"""Single multivariate residual-MLP forecaster.

Input windows are flattened variable-major with the oldest lag first, so
the column of ``x_i(t - alpha)`` (``i`` 0-based, ``alpha`` in ``1..lag``)
is ``i * lag + (lag - alpha)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad

FORMAT_VERSION = 1
MODEL_SUFFIX = ".jacgc.json"

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}

# ForecasterParams: ordered mapping of weight name -> float64 array
Params = dict


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ResidualMlpConfig:
    dim: int
    lag: int
    hidden: int = 50
    n_residual: int = 0
    dropout_rate: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        if self.dim < 1 or self.lag < 1 or self.hidden < 1 or self.n_residual < 0:
            raise ValueError(f"invalid model config {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.dim * self.lag


def input_index(i: int, alpha: int, lag: int) -> int:
    """Column of variable ``i`` (0-based) at lag ``alpha`` (1 = most recent)."""
    return i * lag + (lag - alpha)


def weight_shapes(config: ResidualMlpConfig) -> dict[str, tuple]:
    h = config.hidden
    shapes = {"fc1.weight": (h, config.n_inputs), "fc1.bias": (h,)}
    for k in range(config.n_residual):
        shapes[f"res{k}.weight"] = (h, h)
        shapes[f"res{k}.bias"] = (h,)
    shapes["fc2.weight"] = (config.dim, h)
    shapes["fc2.bias"] = (config.dim,)
    return shapes


def init(config: ResidualMlpConfig, seed: int) -> Params:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in weight_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def forward_var(pv: dict, config: ResidualMlpConfig, x: ad.Var, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> ad.Var:
    """On-tape forward pass; ``pv`` maps weight names to Vars."""
    act = ACTIVATIONS[config.activation]
    h = x @ ad.transpose(pv["fc1.weight"]) + pv["fc1.bias"]
    for k in range(config.n_residual):
        u = act(h @ ad.transpose(pv[f"res{k}.weight"]) + pv[f"res{k}.bias"])
        if training and config.dropout_rate > 0:
            u = ad.dropout(u, config.dropout_rate, True, rng.integers(2**63))
        h = h + u
    return h @ ad.transpose(pv["fc2.weight"]) + pv["fc2.bias"]


def _check_batch(config, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != config.n_inputs:
        raise ValueError(f"batch shape {batch.shape} does not match input width {config.n_inputs}")
    return batch


def forward(params: Params, config: ResidualMlpConfig, batch, training: bool = False,
            seed: Optional[int] = None) -> np.ndarray:
    batch = _check_batch(config, batch)
    tape = ad.Tape()
    pv = {k: tape.const(v) for k, v in params.items()}
    rng = np.random.default_rng(seed) if training else None
    with tape.no_record():
        return forward_var(pv, config, tape.const(batch), training, rng).value


def batch_jacobian(params: Params, config: ResidualMlpConfig, batch) -> np.ndarray:
    """Per-sample input-output Jacobians, shape ``(B, dim, dim * lag)``.

    One reverse pass per output variable; samples do not interact, so each
    pass yields that output row for every sample at once.
    """
    batch = _check_batch(config, batch)
    tape = ad.Tape()
    pv = {k: tape.const(v) for k, v in params.items()}
    x = tape.leaf(batch, requires_grad=True)
    z = forward_var(pv, config, x)
    out = np.empty((batch.shape[0], config.dim, config.n_inputs))
    for j in range(config.dim):
        e = np.zeros((config.dim, 1))
        e[j, 0] = 1.0
        (g,) = ad.backward(ad.sum(z @ tape.const(e)), [x])
        out[:, j, :] = g.value
    return out


def jacobian(params: Params, config: ResidualMlpConfig, x) -> np.ndarray:
    """Jacobian ``(dim, dim * lag)`` of one flattened window, dropout off."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return batch_jacobian(params, config, x)[0]


def effective_linear_map(params: Params, config: ResidualMlpConfig) -> np.ndarray:
    """``W2 @ W1``; the exact Jacobian when ``n_residual == 0``."""
    return params["fc2.weight"] @ params["fc1.weight"]


# ---------------------------------------------------------------------------
# serialization


def to_document(params: Params, config: ResidualMlpConfig, standardization: Optional[dict] = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "weights": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
            for name, arr in params.items()
        },
    }
    if standardization is not None:
        doc["standardization"] = {k: [float(v) for v in standardization[k]] for k in ("means", "stds")}
    return doc


def serialize(params: Params, config: ResidualMlpConfig, standardization: Optional[dict] = None) -> bytes:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(to_document(params, config, standardization), sort_keys=False).encode()


def from_document(doc: dict):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        config = ResidualMlpConfig(**doc["config"])
        weights = doc["weights"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    expected = weight_shapes(config)
    if set(weights) != set(expected):
        raise ModelFormatError(f"weight names {sorted(weights)} do not match config")
    params = {}
    for name, shape in expected.items():
        entry = weights[name]
        if tuple(entry.get("shape", ())) != shape:
            raise ModelFormatError(f"weight {name!r}: shape {entry.get('shape')} != expected {list(shape)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ModelFormatError(f"weight {name!r}: {data.size} values for shape {list(shape)}")
        if not np.all(np.isfinite(data)):
            raise ModelFormatError(f"weight {name!r}: non-finite values")
        params[name] = data.reshape(shape)
    std = doc.get("standardization")
    if std is not None:
        std = {k: np.asarray(std[k], dtype=np.float64) for k in ("means", "stds")}
    return params, config, std


def deserialize(blob: bytes):
    """Inverse of :func:`serialize`; returns ``(params, config, standardization)``."""
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return from_document(doc)


def save(path, params: Params, config: ResidualMlpConfig, standardization: Optional[dict] = None):
    with open(path, "wb") as fh:
        fh.write(serialize(params, config, standardization))


def load(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
