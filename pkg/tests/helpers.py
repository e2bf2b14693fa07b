"""Shared fixtures and independent reference computations for the test suite."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import minimize

from mixdro.dataset import EncodedDataset, codes_to_onehot
from mixdro.model import Coefficients
from mixdro.synthetic import make_dataset, synthetic_schema


def random_instance(seed: int, max_m: int = 6, max_card: int = 4, N: int = 5):
    """Small random problem: dataset, coefficients, lambda, r and rounded weights."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_m + 1))
    cards = tuple(int(k) for k in rng.integers(2, max_card + 1, size=m))
    n = int(rng.integers(0, 3))
    precision = ("integer", "one-decimal", "none")[seed % 3]
    raw = rng.uniform(0.1, 2.5, size=m)
    delta = {"integer": np.maximum(np.round(raw), 1.0), "one-decimal": np.maximum(np.round(raw, 1), 0.1), "none": raw}[precision]
    schema = synthetic_schema(n, cards)
    codes = np.column_stack([rng.integers(0, k, size=N) for k in cards])
    ds = EncodedDataset(rng.normal(size=(N, n)), codes, rng.choice([-1, 1], size=N), schema)
    beta = Coefficients(rng.uniform(-2, 2), rng.uniform(-2, 2, size=n), rng.uniform(-2, 2, size=schema.c))
    lam, r = rng.uniform(0, 2), rng.uniform(0, 2, size=N)
    return ds, beta, float(lam), r, delta, precision


def plain_softplus(t):
    return np.logaddexp(0.0, t)


def brute_values(ds: EncodedDataset, i: int, beta: Coefficients, lam: float, delta):
    """Every ``(softplus - lam * dist)`` value for datapoint ``i``, by plain enumeration."""
    cards = ds.schema.cardinalities
    out = []
    for z in itertools.product(*[range(k) for k in cards]):
        z = np.array(z, dtype=int)
        onehot = codes_to_onehot(z[None, :], cards)[0]
        score = beta.intercept + ds.X[i] @ beta.beta_x + onehot @ beta.beta_z
        d = float(np.sum(np.asarray(delta)[z != ds.codes[i]]))
        out.append((plain_softplus(-ds.y[i] * score) - lam * d, tuple(z), d))
    return out


def path_bound_by_enumeration(ds: EncodedDataset, i: int, beta: Coefficients, lam: float, r_i: float, delta) -> float:
    """max over z of -y bz.z - log(exp(r + lam d) - 1), by enumeration."""
    cards = ds.schema.cardinalities
    best = -np.inf
    for z in itertools.product(*[range(k) for k in cards]):
        z = np.array(z)
        lin = -ds.y[i] * float(codes_to_onehot(z[None, :], cards)[0] @ beta.beta_z)
        d = float(np.sum(np.asarray(delta)[z != ds.codes[i]]))
        best = max(best, lin - np.log(np.expm1(r_i + lam * d)))
    return float(best)


def erm_fit(ds: EncodedDataset) -> tuple[Coefficients, float]:
    """Unregularized logistic regression by L-BFGS on the mean log-loss."""
    A = np.hstack([np.ones((ds.N, 1)), ds.X, ds.Z]) * ds.y[:, None]

    def f(w):
        t = -A @ w
        val = np.mean(np.logaddexp(0.0, t))
        grad = -(A.T @ (1.0 / (1.0 + np.exp(-t)))) / ds.N
        return val, grad

    res = minimize(f, np.zeros(A.shape[1]), jac=True, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
    return Coefficients.from_vector(res.x, ds.schema.n), float(res.fun)


def fixture(seed: int, N: int = 40, n: int = 2, cards=(3, 2), epsilon: float = 0.2, precision: str = "integer"):
    """Seeded small training problem with random weights."""
    from mixdro.synthetic import random_params

    ds = make_dataset(N, n, cards, seed, noise=2.0)
    return ds, random_params(n, len(cards), seed, epsilon, precision)
