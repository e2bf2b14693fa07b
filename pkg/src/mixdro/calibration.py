"""Ambiguity-set and shift-model parameters from probabilities of certainty.

A numerical feature ``j`` is assumed to shift by Laplace noise with
``P(|shift| <= u_j) = rho_x[j]``; a categorical feature ``l`` keeps its
value with probability ``rho_z[l]`` and otherwise moves uniformly to one of
the other categories. A likelihood-ratio test with threshold ``theta`` then
yields the transport costs and the Wasserstein radius.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

PRECISIONS = ("integer", "one-decimal", "none")
RHO_X_BOUNDS = (0.05, 0.95)
RHO_Z_CEILING = 0.95


class CalibrationError(ValueError):
    pass


def calibrate_gamma(rho: float, u: float) -> float:
    """Per-unit cost of moving numerical feature value: ``-log(1 - rho) / u``."""
    if not 0.0 < rho < 1.0:
        raise CalibrationError(f"rho_x must lie in (0, 1), got {rho}")
    if not u > 0.0:
        raise CalibrationError(f"interval half-width must be positive, got {u}")
    return -math.log1p(-rho) / u


def laplace_scale(rho: float, u: float) -> float:
    """Laplace scale ``b`` with ``P(|noise| <= u) = rho``; always ``1 / gamma``."""
    if not 0.0 < rho < 1.0:
        raise CalibrationError(f"rho_x must lie in (0, 1), got {rho}")
    if not u > 0.0:
        raise CalibrationError(f"interval half-width must be positive, got {u}")
    return -u / math.log1p(-rho)


def calibrate_delta(rho: float, cardinality: int) -> float:
    """Cost of flipping a categorical feature: ``log(rho (K - 1) / (1 - rho))``."""
    if cardinality < 2:
        raise CalibrationError("cardinality must be at least 2")
    if not (1.0 / cardinality <= rho < 1.0):
        raise CalibrationError(f"rho_z must lie in [1/{cardinality}, 1), got {rho}")
    if rho * cardinality == 1.0:
        return 0.0
    return math.log(rho * (cardinality - 1) / (1.0 - rho))


def calibrate_epsilon(theta: float) -> float:
    if not 0.0 < theta <= 1.0:
        raise CalibrationError(f"theta must lie in (0, 1], got {theta}")
    return 0.0 if theta == 1.0 else -math.log(theta)


def round_weights(delta, precision: str) -> np.ndarray:
    """Round weights half away from zero to an integer or one decimal.

    Anything that would round to zero is clamped to the step so weights stay
    positive.
    """
    if precision not in PRECISIONS:
        raise CalibrationError(f"unknown rounding precision {precision!r}")
    delta = np.asarray(delta, dtype=float)
    if precision == "none":
        return delta.copy()
    quantum = Decimal("1") if precision == "integer" else Decimal("0.1")
    out = np.array([float(Decimal(repr(float(v))).quantize(quantum, rounding=ROUND_HALF_UP)) for v in delta.ravel()])
    out = np.maximum(out, float(quantum)).reshape(delta.shape)
    return out


@dataclass(frozen=True)
class CertaintySpec:
    rho_x: np.ndarray
    u: np.ndarray
    rho_z: np.ndarray
    cardinalities: tuple[int, ...]
    theta: float

    def __post_init__(self):
        for name in ("rho_x", "u", "rho_z"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in self.cardinalities))
        if self.rho_x.shape != self.u.shape:
            raise CalibrationError("rho_x and u must have the same length")
        if len(self.rho_z) != len(self.cardinalities):
            raise CalibrationError("rho_z needs one entry per categorical feature")
        if np.any((self.rho_x <= 0) | (self.rho_x >= 1)):
            raise CalibrationError("rho_x entries must lie in (0, 1)")
        if np.any(self.u <= 0):
            raise CalibrationError("interval half-widths must be positive")
        for r, k in zip(self.rho_z, self.cardinalities):
            if not 1.0 / k <= r < 1.0:
                raise CalibrationError(f"rho_z={r} outside [1/{k}, 1)")
        if not 0.0 < self.theta <= 1.0:
            raise CalibrationError("theta must lie in (0, 1]")


@dataclass(frozen=True)
class AmbiguityParams:
    """Weighted Wasserstein ball. Label transport cost is infinite and not stored."""

    gamma: np.ndarray
    delta: np.ndarray
    epsilon: float
    precision: str = "none"

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if np.any(gamma <= 0):
            raise CalibrationError("gamma entries must be positive")
        if np.any(delta < 0):
            raise CalibrationError("delta entries must be nonnegative")
        if self.epsilon < 0:
            raise CalibrationError("epsilon must be nonnegative")
        if self.precision not in PRECISIONS:
            raise CalibrationError(f"unknown precision {self.precision!r}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def with_epsilon(self, epsilon: float) -> "AmbiguityParams":
        return AmbiguityParams(self.gamma, self.delta, epsilon, self.precision)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "delta": self.delta.tolist(),
            "epsilon": self.epsilon,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AmbiguityParams":
        return cls(d["gamma"], d["delta"], d["epsilon"], d.get("precision", "none"))


@dataclass(frozen=True)
class PerturbationModel:
    b: np.ndarray
    rho_z: np.ndarray
    cardinalities: tuple[int, ...]
    rho_x: np.ndarray | None = None
    u: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "rho_z", np.atleast_1d(np.asarray(self.rho_z, dtype=float)))
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in self.cardinalities))
        if np.any(self.b <= 0):
            raise CalibrationError("Laplace scales must be positive")

    @classmethod
    def from_certainty(cls, spec: CertaintySpec) -> "PerturbationModel":
        b = [laplace_scale(r, u) for r, u in zip(spec.rho_x, spec.u)]
        return cls(np.array(b), spec.rho_z.copy(), spec.cardinalities, spec.rho_x.copy(), spec.u.copy())


@dataclass
class Calibration:
    spec: CertaintySpec
    params: AmbiguityParams
    delta_raw: np.ndarray
    perturbation: PerturbationModel
    warnings: list[str] = field(default_factory=list)


def calibrate(spec: CertaintySpec, precision: str = "integer", feature_names: Sequence[str] | None = None) -> Calibration:
    """Turn a certainty specification into ambiguity-set and shift-model parameters."""
    gamma = np.array([calibrate_gamma(r, u) for r, u in zip(spec.rho_x, spec.u)])
    delta_raw = np.array([calibrate_delta(r, k) for r, k in zip(spec.rho_z, spec.cardinalities)])
    delta = round_weights(delta_raw, precision)
    notes = []
    names = list(feature_names) if feature_names is not None else [f"z{ell}" for ell in range(len(delta))]
    for ell, (raw, new) in enumerate(zip(delta_raw, delta)):
        if raw == 0.0:
            msg = f"delta for {names[ell]} is zero (rho_z = 1/|C|)"
            msg += f"; clamped to {new}" if new > 0 else "; left at zero"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
    params = AmbiguityParams(gamma, delta, calibrate_epsilon(spec.theta), precision)
    return Calibration(spec, params, delta_raw, PerturbationModel.from_certainty(spec), notes)


def sample_certainty(
    rng: np.random.Generator,
    n: int,
    cardinalities: Sequence[int],
    mean: float,
    std: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``rho_x`` and ``rho_z`` from one normal law, clipped to the valid domain.

    ``rho_x`` is clipped to [0.05, 0.95] and ``rho_z[l]`` to [1/|C_l|, 0.95].
    """
    lo, hi = RHO_X_BOUNDS
    rho_x = np.clip(rng.normal(mean, std, size=n), lo, hi)
    raw = rng.normal(mean, std, size=len(cardinalities))
    floors = np.array([1.0 / k for k in cardinalities])
    rho_z = np.clip(raw, floors, RHO_Z_CEILING) if len(cardinalities) else raw
    return rho_x, rho_z


def stddev_half_widths(X: np.ndarray, factor: float = 0.4) -> np.ndarray:
    """Interval half-widths ``factor * std(x_j)`` from training data."""
    sd = np.std(np.asarray(X, dtype=float), axis=0)
    if np.any(sd <= 0):
        raise CalibrationError("constant numerical feature has zero standard deviation")
    return factor * sd
