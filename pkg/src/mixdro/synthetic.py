"""Seeded mixed-feature logistic data for fixtures, benchmarks and checks."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .calibration import AmbiguityParams, CertaintySpec, calibrate, sample_certainty, stddev_half_widths
from .dataset import DatasetSchema, EncodedDataset


def synthetic_schema(n: int, cardinalities: Sequence[int]) -> DatasetSchema:
    return DatasetSchema(
        tuple(f"x{j}" for j in range(n)),
        tuple(f"z{ell}" for ell in range(len(cardinalities))),
        tuple(tuple(f"c{q}" for q in range(k)) for k in cardinalities),
        (("neg", -1), ("pos", 1)),
    )


def make_dataset(
    N: int,
    n: int,
    cardinalities: Sequence[int],
    seed: int,
    signal: float = 1.0,
    noise: float = 1.0,
) -> EncodedDataset:
    """Labels drawn from a logistic model with random coefficients.

    ``noise`` divides the score before the logistic link, so larger values
    give less separable data. Both labels are always present.
    """
    rng = np.random.default_rng(seed)
    schema = synthetic_schema(n, cardinalities)
    X = rng.normal(size=(N, n))
    codes = np.column_stack([rng.integers(0, k, size=N) for k in cardinalities]) if cardinalities else np.zeros((N, 0), int)
    w_x = rng.normal(scale=signal, size=n)
    w_cat = [rng.normal(scale=signal, size=k) for k in cardinalities]
    score = X @ w_x + sum((w[codes[:, ell]] for ell, w in enumerate(w_cat)), np.zeros(N))
    p = 1.0 / (1.0 + np.exp(-score / noise))
    y = np.where(rng.random(N) < p, 1, -1)
    if N >= 2 and abs(int(y.sum())) == N:
        y[0] = -y[0]
    return EncodedDataset(X, codes, y, schema)


def make_params(
    ds: EncodedDataset,
    seed: int,
    theta: float = 0.8,
    mean: float = 0.6,
    std: float = 0.2,
    precision: str = "integer",
):
    """Calibrated ambiguity set and shift model for ``ds`` from sampled certainties.

    Returns ``(params, calibration)``.
    """
    rng = np.random.default_rng(seed)
    rho_x, rho_z = sample_certainty(rng, ds.schema.n, ds.schema.cardinalities, mean, std)
    u = stddev_half_widths(ds.X) if ds.schema.n else np.zeros(0)
    spec = CertaintySpec(rho_x, u, rho_z, ds.schema.cardinalities, theta)
    cal = calibrate(spec, precision)
    return cal.params, cal


def random_params(n: int, m: int, seed: int, epsilon: float, precision: str = "integer") -> AmbiguityParams:
    """Plain random weights without a certainty model behind them."""
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(0.5, 2.0, size=n)
    raw = rng.uniform(0.3, 2.5, size=m)
    if precision == "integer":
        delta = np.maximum(np.round(raw), 1.0)
    elif precision == "one-decimal":
        delta = np.maximum(np.round(raw, 1), 0.1)
    else:
        delta = raw
    return AmbiguityParams(gamma, delta, epsilon, precision)
