"""Most-violated-constraint search over categorical assignments.

For a datapoint ``i`` and a candidate ``(lam, r, beta)``, the separation
problem maximizes over all categorical assignments ``z``

    softplus(-y_i * (b0 + bx.x_i + bz.z)) - lam * dist(z, z_i) - r_i

where ``dist`` sums the flip costs of the features that differ from
``z_i``. The dynamic program walks the categorical features in order with
states ``(k, d)`` = (features decided, accumulated flip cost), keeping per
state the best linear part ``-y_i * bz.z`` over the decided features.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import EncodedDataset, codes_to_onehot
from .model import Coefficients, softplus

BRUTE_FORCE_CAP = 10**6


class SeparationCapError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceScale:
    """Exact keys for accumulated distances.

    Rounded weights are keyed as integers in units of the rounding step so
    equal distances always merge; unrounded weights are keyed by their float
    value.
    """

    per_unit: int | None

    @classmethod
    def for_precision(cls, precision: str) -> "DistanceScale":
        return cls({"integer": 1, "one-decimal": 10}.get(precision))

    def key(self, value: float):
        if self.per_unit is None:
            return float(value)
        return int(round(value * self.per_unit))

    def value(self, key) -> float:
        if self.per_unit is None:
            return float(key)
        return key / self.per_unit


@dataclass(frozen=True)
class StateSpace:
    """Layered DP states; layer ``k`` lists the reachable distance keys after ``k`` features.

    The same space serves every datapoint since each feature can either keep
    its value (cost 0) or flip (cost ``delta[k]``).
    """

    delta_keys: tuple
    scale: DistanceScale
    layers: tuple[tuple, ...]

    @property
    def m(self) -> int:
        return len(self.delta_keys)

    def distances(self, k: int) -> np.ndarray:
        return np.array([self.scale.value(d) for d in self.layers[k]], dtype=float)

    def index(self, k: int) -> dict:
        return {d: p for p, d in enumerate(self.layers[k])}

    def states(self) -> list[tuple[int, float]]:
        """All non-root, non-terminal states ``(k, d)`` with ``1 <= k <= m``."""
        return [(k, self.scale.value(d)) for k in range(1, self.m + 1) for d in self.layers[k]]

    @property
    def size(self) -> int:
        return sum(len(layer) for layer in self.layers) + 1


def build_state_space(delta: Sequence[float], precision: str = "none") -> StateSpace:
    scale = DistanceScale.for_precision(precision)
    keys = tuple(scale.key(v) for v in delta)
    layers = [(scale.key(0.0),)]
    for dk in keys:
        prev = layers[-1]
        layers.append(tuple(sorted(set(prev) | {d + dk for d in prev})))
    return StateSpace(keys, scale, tuple(layers))


def _contributions(beta: Coefficients, cardinalities, offsets, y: int) -> list[np.ndarray]:
    """Per-feature value of ``-y * bz_l . z_l`` for every category (reference last, 0)."""
    out = []
    for ell, k in enumerate(cardinalities):
        blk = beta.beta_z[offsets[ell]:offsets[ell + 1]]
        out.append(np.concatenate([-y * blk, [0.0]]))
    return out


@dataclass
class SeparationResult:
    violation: float
    witness: np.ndarray
    witness_z: np.ndarray
    witness_distance: float
    ops: int = 0
    g: list[dict] = field(default_factory=list, repr=False)


def dp_separation(
    lam: float,
    r_i: float,
    beta: Coefficients,
    ds: EncodedDataset,
    i: int,
    space: StateSpace,
) -> SeparationResult:
    """Exact separation for one datapoint by forward dynamic programming.

    Ties go to the first maximizer met, scanning previous states in
    increasing distance and categories in dictionary order.
    """
    schema = ds.schema
    cards, offsets = schema.cardinalities, schema.offsets
    zi = ds.codes[i]
    y = int(ds.y[i])
    contrib = _contributions(beta, cards, offsets, y)

    g = [{space.layers[0][0]: 0.0}]
    back = [{}]
    ops = 0
    for k in range(space.m):
        cur: dict = {}
        choice: dict = {}
        for d_prev in space.layers[k]:
            base = g[k][d_prev]
            for q in range(cards[k]):
                ops += 1
                d = d_prev if q == zi[k] else d_prev + space.delta_keys[k]
                cand = base + contrib[k][q]
                if d not in cur or cand > cur[d]:
                    cur[d] = cand
                    choice[d] = (q, d_prev)
        g.append(cur)
        back.append(choice)

    head = -y * (beta.intercept + float(ds.X[i] @ beta.beta_x))
    best, best_d = -math.inf, None
    for d in space.layers[space.m]:
        val = softplus(head + g[space.m][d]) - lam * space.scale.value(d) - r_i
        if val > best:
            best, best_d = val, d

    witness = np.empty(space.m, dtype=int)
    d = best_d
    for k in range(space.m, 0, -1):
        q, d = back[k][d]
        witness[k - 1] = q
    z = codes_to_onehot(witness[None, :], cards)[0]
    return SeparationResult(best, witness, z, space.scale.value(best_d), ops, g)


def layer_values(beta: Coefficients, ds: EncodedDataset, space: StateSpace, idx=None):
    """Best linear categorical part per final-layer state, vectorized over datapoints.

    Returns ``(G, back)`` with ``G[i, p]`` the maximum of ``-y_i * bz.z`` over
    assignments whose distance from ``z_i`` has key ``space.layers[m][p]``,
    and backtracking tables for witness recovery.
    """
    idx = np.arange(ds.N) if idx is None else np.asarray(idx, dtype=int)
    schema = ds.schema
    cards, offsets = schema.cardinalities, schema.offsets
    codes = ds.codes[idx]
    y = ds.y[idx].astype(float)
    N = len(idx)
    rows = np.arange(N)

    G = np.zeros((N, 1))
    back = []
    for k in range(space.m):
        a = cards[k]
        blk = beta.beta_z[offsets[k]:offsets[k + 1]]
        # contrib[i, q] = -y_i * bz[q], reference category contributes 0
        contrib = np.zeros((N, a))
        contrib[:, : a - 1] = -y[:, None] * blk[None, :]
        match_val = contrib[rows, codes[:, k]]
        masked = contrib.copy()
        masked[rows, codes[:, k]] = -np.inf
        flip_cat = np.argmax(masked, axis=1)
        flip_val = masked[rows, flip_cat]

        prev, nxt = space.layers[k], space.layers[k + 1]
        pos = space.index(k + 1)
        newG = np.full((N, len(nxt)), -np.inf)
        src = np.zeros((N, len(nxt)), dtype=int)
        flipped = np.zeros((N, len(nxt)), dtype=bool)
        for p, d in enumerate(prev):
            for is_flip, t, val in (
                (False, pos[d], match_val),
                (True, pos[d + space.delta_keys[k]], flip_val),
            ):
                cand = G[:, p] + val
                better = cand > newG[:, t]
                newG[better, t] = cand[better]
                src[better, t] = p
                flipped[better, t] = is_flip
        back.append((src, flipped, flip_cat))
        G = newG
    return G, back


def separate_all(
    lam: float,
    r,
    beta: Coefficients,
    ds: EncodedDataset,
    space: StateSpace,
    idx=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run separation for many datapoints at once.

    Returns violations, witness category codes (rows aligned with ``idx``)
    and witness distances.
    """
    idx = np.arange(ds.N) if idx is None else np.asarray(idx, dtype=int)
    r = np.broadcast_to(np.asarray(r, dtype=float), (ds.N,))[idx]
    G, back = layer_values(beta, ds, space, idx)
    dists = space.distances(space.m)
    y = ds.y[idx].astype(float)
    head = -y * (beta.intercept + ds.X[idx] @ beta.beta_x)
    vals = softplus(head[:, None] + G) - lam * dists[None, :]
    best = np.argmax(vals, axis=1)
    N = len(idx)
    rows = np.arange(N)
    violation = vals[rows, best] - r

    witness = np.empty((N, space.m), dtype=int)
    state = best.copy()
    codes = ds.codes[idx]
    for k in range(space.m - 1, -1, -1):
        src, flipped, flip_cat = back[k]
        f = flipped[rows, state]
        witness[:, k] = np.where(f, flip_cat, codes[:, k])
        state = src[rows, state]
    return violation, witness, dists[best]


def enumerate_assignments(cardinalities: Sequence[int], cap: int = BRUTE_FORCE_CAP) -> np.ndarray:
    total = math.prod(cardinalities)
    if total > cap:
        raise SeparationCapError(f"{total} categorical assignments exceed the cap of {cap}")
    if not cardinalities:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(itertools.product(*[range(k) for k in cardinalities])), dtype=int)


def brute_force_separation(
    lam: float,
    r_i: float,
    beta: Coefficients,
    ds: EncodedDataset,
    i: int,
    delta: Sequence[float],
    cap: int = BRUTE_FORCE_CAP,
) -> SeparationResult:
    """Evaluate the separation objective at every categorical assignment."""
    cards = ds.schema.cardinalities
    allz = enumerate_assignments(cards, cap)
    Z = codes_to_onehot(allz, cards)
    delta = np.asarray(delta, dtype=float)
    dist = (allz != ds.codes[i][None, :]) @ delta if len(cards) else np.zeros(1)
    y = int(ds.y[i])
    scores = beta.intercept + float(ds.X[i] @ beta.beta_x) + Z @ beta.beta_z
    vals = softplus(-y * scores) - lam * dist - r_i
    best = int(np.argmax(vals))
    return SeparationResult(float(vals[best]), allz[best], Z[best], float(dist[best]))
