"""Variational factor types and the moment algebra shared by updates and inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, log_expit

PRECISION_FLOOR = 1e-8
PRECISION_CAP = 1e8
LAMBDA_EPS = 1e-6


@dataclass
class GaussianFactor:
    """Diagonal-covariance Gaussian ``q(z) = N(mean, diag(1 / precision))``.

    Scalars (biases) are stored as length-1 vectors. An infinite precision
    entry is allowed and denotes a deterministic coordinate.
    """

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.precision = np.atleast_1d(np.asarray(self.precision, dtype=float))
        if self.mean.shape != self.precision.shape:
            raise ValueError(
                f"mean shape {self.mean.shape} != precision shape {self.precision.shape}"
            )
        if not np.all(self.precision > 0):
            raise ValueError("precision entries must be > 0")

    @classmethod
    def from_variance(cls, mean, variance) -> GaussianFactor:
        variance = np.atleast_1d(np.asarray(variance, dtype=float))
        with np.errstate(divide="ignore"):
            precision = 1.0 / variance
        return cls(mean, precision)

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.precision

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> GaussianFactor:
        return GaussianFactor(self.mean.copy(), self.precision.copy())


@dataclass
class GammaFactor:
    """Gamma ``q(tau)`` in shape/rate parameterization."""

    shape: float
    rate: float

    def __post_init__(self):
        self.shape = float(self.shape)
        self.rate = float(self.rate)
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"shape and rate must be > 0, got {self.shape}, {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def mean_log(self) -> float:
        return float(digamma(self.shape) - np.log(self.rate))


def clip_precision(precision):
    return np.clip(precision, PRECISION_FLOOR, PRECISION_CAP)


def second_moment_diag(f: GaussianFactor) -> np.ndarray:
    """Diagonal of ``E[z z^T]``."""
    return f.mean**2 + f.variance


def expected_sq_dot(a: GaussianFactor, b: GaussianFactor) -> float:
    """``E[(a^T b)^2]`` for independent diagonal Gaussians."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    va, vb = a.variance, b.variance
    cross = a.mean**2 * vb + va * b.mean**2 + va * vb
    return float(np.dot(a.mean, b.mean) ** 2 + cross.sum())


def expected_sq_norm_diff(u: GaussianFactor, parents: list[GaussianFactor]) -> float:
    """``E[||u - s||^2]`` where ``s`` is the average of the parent factors (0 if none)."""
    e_u = float(second_moment_diag(u).sum())
    if not parents:
        return e_u
    n = len(parents)
    mean_s = sum(p.mean for p in parents) / n
    var_s = sum(p.variance for p in parents) / n**2
    e_s = float(mean_s @ mean_s + var_s.sum())
    return e_u - 2.0 * float(u.mean @ mean_s) + e_s


def jaakkola_lambda(delta):
    """``lambda(delta) = (sigmoid(delta) - 1/2) / (2 delta)``, with limit 1/8 at 0.

    Accepts scalars or arrays.
    """
    d = np.abs(np.asarray(delta, dtype=float))
    small = d <= LAMBDA_EPS
    safe = np.where(small, 1.0, d)
    # sigmoid(d) - 1/2 = tanh(d/2) / 2 without the cancellation near zero
    out = np.where(small, 0.125, np.tanh(safe / 2.0) / (4.0 * safe))
    if out.ndim == 0:
        return float(out)
    return out


def jaakkola_bound(x, delta):
    """Lower bound on ``log sigmoid(x)`` tangent at ``delta``."""
    lam = jaakkola_lambda(delta)
    return (x - delta) / 2.0 - lam * (x**2 - delta**2) + log_expit(delta)


def gaussian_entropy(precision) -> float:
    precision = np.asarray(precision, dtype=float)
    return float(0.5 * np.sum(1.0 + np.log(2 * np.pi) - np.log(precision)))
