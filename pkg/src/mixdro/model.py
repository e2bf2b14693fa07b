"""Logistic model coefficients, losses and the weighted ground distance."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calibration import AmbiguityParams


def softplus(t):
    """``log(1 + exp(t))`` without overflow."""
    t = np.asarray(t, dtype=float)
    out = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return float(out) if out.ndim == 0 else out


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Coefficients:
    intercept: float
    beta_x: np.ndarray
    beta_z: np.ndarray

    def __post_init__(self):
        bx = np.atleast_1d(np.asarray(self.beta_x, dtype=float)).copy()
        bz = np.atleast_1d(np.asarray(self.beta_z, dtype=float)).copy()
        if not (math.isfinite(self.intercept) and np.all(np.isfinite(bx)) and np.all(np.isfinite(bz))):
            raise ValueError("coefficients must be finite")
        bx.setflags(write=False)
        bz.setflags(write=False)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "beta_x", bx)
        object.__setattr__(self, "beta_z", bz)

    @classmethod
    def zeros(cls, n: int, c: int) -> "Coefficients":
        return cls(0.0, np.zeros(n), np.zeros(c))

    @classmethod
    def from_vector(cls, v, n: int) -> "Coefficients":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), v[1:1 + n], v[1 + n:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.beta_x, self.beta_z])

    def score(self, X, Z) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if X.shape[-1] != len(self.beta_x) or Z.shape[-1] != len(self.beta_z):
            raise ValueError(
                f"dimension mismatch: coefficients ({len(self.beta_x)}, {len(self.beta_z)}), "
                f"data ({X.shape[-1]}, {Z.shape[-1]})"
            )
        return self.intercept + X @ self.beta_x + Z @ self.beta_z

    def to_json(self, schema_fingerprint: str | None = None) -> str:
        return json.dumps(
            {
                "intercept": self.intercept,
                "beta_x": self.beta_x.tolist(),
                "beta_z": self.beta_z.tolist(),
                "schema_fingerprint": schema_fingerprint,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str, schema_fingerprint: str | None = None) -> "Coefficients":
        d = json.loads(text)
        stored = d.get("schema_fingerprint")
        if schema_fingerprint is not None and stored is not None and stored != schema_fingerprint:
            raise ValueError(f"model schema {stored} does not match dataset schema {schema_fingerprint}")
        return cls(d["intercept"], d["beta_x"], d["beta_z"])


@dataclass(frozen=True)
class DualState:
    lam: float
    r: np.ndarray

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    def norm_bound_violation(self, beta: Coefficients, gamma) -> float:
        """Largest excess of ``|beta_x[j]| / gamma[j]`` over lambda (<= 0 when feasible)."""
        if len(beta.beta_x) == 0:
            return -self.lam
        return float(np.max(np.abs(beta.beta_x) / np.asarray(gamma)) - self.lam)


def log_loss(beta: Coefficients, x, z, y) -> float:
    """Log-loss of a single labelled point (``z`` in encoded form)."""
    return softplus(-y * float(beta.score(np.atleast_1d(x), np.atleast_1d(z))))


def log_losses(beta: Coefficients, X, Z, y) -> np.ndarray:
    return softplus(-np.asarray(y) * beta.score(X, Z))


def predict_proba(beta: Coefficients, x, z):
    """Probability of label +1."""
    return sigmoid(beta.score(x, z))


class Point(NamedTuple):
    x: np.ndarray
    codes: np.ndarray
    y: int


def distance(a: Point, b: Point, params: AmbiguityParams) -> float:
    """Weighted transport cost between two points; ``inf`` when labels differ."""
    if a.y != b.y:
        return math.inf
    dx = float(np.sum(params.gamma * np.abs(np.asarray(a.x, float) - np.asarray(b.x, float))))
    flips = np.asarray(a.codes) != np.asarray(b.codes)
    return dx + float(np.sum(params.delta[flips]))
