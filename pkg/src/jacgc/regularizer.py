"""Input-output Jacobian penalties, built on-tape so they can be trained.

Each penalty takes the model output ``z`` (B x D) and the input ``x``
(B x D*lag) it was computed from, and returns the batch mean of a
per-sample Jacobian norm.  Because samples in a batch never interact, one
reverse pass of ``sum_b (v_b . z_b)`` gives ``v_b^T J(x_b)`` for every
sample at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KINDS = ("none", "l1_exact", "fro_exact", "fro_random_projection")


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "fro_random_projection"
    lam: float = 0.0
    n_proj: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.kind == "fro_random_projection" and self.n_proj < 1:
            raise ValueError("n_proj must be >= 1")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.lam > 0


def _directional_grad(z: ad.Var, x: ad.Var, v: np.ndarray) -> ad.Var:
    """Rows ``v_b^T J(x_b)``; ``v`` is (D,) shared or (B, D) per sample."""
    tape = z.tape
    if v.ndim == 1:
        proj = z @ tape.const(v.reshape(-1, 1))
    else:
        proj = ad.mul(z, tape.const(v))
    (g,) = ad.backward(ad.sum(proj), [x], create_graph=True)
    return g


def penalty_l1(z: ad.Var, x: ad.Var) -> ad.Var:
    """Batch mean of the entrywise L1 norm of J; materializes all D rows."""
    b, d = z.shape
    total = None
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        term = ad.sum(ad.abs(_directional_grad(z, x, e)))
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / b)


def penalty_fro_exact(z: ad.Var, x: ad.Var) -> ad.Var:
    """Batch mean of ||J||_F^2 = sum over basis e of ||d(e.z)/dx||^2."""
    b, d = z.shape
    total = None
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        term = ad.sum(ad.square(_directional_grad(z, x, e)))
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / b)


def sample_unit_sphere(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform direction(s) on S^{d-1}: normalized standard Gaussians."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    shape = (d,) if size is None else (size, d)
    while True:
        g = rng.standard_normal(shape)
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.all(norms > 0):
            return g / norms


def penalty_fro_rp(z: ad.Var, x: ad.Var, n_proj: int, rng: np.random.Generator) -> ad.Var:
    """Unbiased random-projection estimate of the batch mean of ||J||_F^2.

    Each sample gets its own direction per projection.  E[v v^T] = I/D on
    the sphere, hence the factor D.
    """
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    b, d = z.shape
    total = None
    for _ in range(n_proj):
        v = sample_unit_sphere(d, rng, size=b)
        term = ad.sum(ad.square(_directional_grad(z, x, v)))
        total = term if total is None else total + term
    return ad.scale(total, d / (n_proj * b))


def penalty(spec: RegularizerSpec, z: ad.Var, x: ad.Var, rng: np.random.Generator) -> ad.Var:
    if spec.kind == "l1_exact":
        return penalty_l1(z, x)
    if spec.kind == "fro_exact":
        return penalty_fro_exact(z, x)
    if spec.kind == "fro_random_projection":
        return penalty_fro_rp(z, x, spec.n_proj, rng)
    return z.tape.const(np.asarray(0.0))
