"""Per-datapoint state-transition DAGs and their longest-path dual constraints.

Vertices are the DP states ``(k, d)`` plus a sink in layer ``m + 1``. A
category arc for feature ``k`` and category ``q`` goes from ``(k-1, d)`` to
``(k, d + delta_k * [q != z_k])`` and carries the symbolic weight
``-y * bz_k . e_q``; every last-layer vertex ``(m, d)`` has a sink arc
with weight ``-log(exp(r + lam * d) - 1)``. Weights are kept symbolic so a
graph can be reused for any coefficients.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from graphlib import TopologicalSorter
from typing import Iterator, Sequence

import numpy as np

from .dataset import EncodedDataset
from .model import Coefficients
from .separation import StateSpace

log = logging.getLogger(__name__)

CATEGORY_ARC = 0
SINK_ARC = 1


@dataclass(frozen=True)
class SeparationGraph:
    space: StateSpace
    pattern: tuple[int, ...]
    cardinalities: tuple[int, ...]
    layer_offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    feature: np.ndarray
    category: np.ndarray
    sink_distance: np.ndarray

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def n_vertices(self) -> int:
        return int(self.layer_offsets[-1])

    @property
    def n_arcs(self) -> int:
        return len(self.src)

    @property
    def source(self) -> int:
        return 0

    @property
    def sink(self) -> int:
        return self.n_vertices - 1

    def vertex(self, v: int) -> tuple[int, float]:
        """``(layer, distance)`` of vertex ``v``; the sink reports ``(m + 1, 0)``."""
        if v == self.sink:
            return (self.m + 1, 0.0)
        k = int(np.searchsorted(self.layer_offsets, v, side="right") - 1)
        return (k, self.space.scale.value(self.space.layers[k][v - self.layer_offsets[k]]))

    def vertices(self) -> list[tuple[int, float]]:
        return [self.vertex(v) for v in range(self.n_vertices)]

    def successors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v: [] for v in range(self.n_vertices)}
        for s, t in zip(self.src.tolist(), self.dst.tolist()):
            out[s].append(t)
        return out

    def topological_order(self) -> list[int]:
        preds: dict[int, set] = {v: set() for v in range(self.n_vertices)}
        for s, t in zip(self.src.tolist(), self.dst.tolist()):
            preds[t].add(s)
        return list(TopologicalSorter(preds).static_order())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.layer_offsets, self.src, self.dst, self.kind, self.feature, self.category):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        h.update(np.nan_to_num(self.sink_distance, nan=-1.0).tobytes())
        return h.hexdigest()[:16]

    def arc_weights(self, beta: Coefficients, y: int, lam: float, r_i: float) -> np.ndarray:
        """Numeric arc weights; a sink arc outside the log domain is marked ``-inf``."""
        offsets = np.concatenate([[0], np.cumsum([k - 1 for k in self.cardinalities])]).astype(int)
        w = np.zeros(self.n_arcs)
        cat = self.kind == CATEGORY_ARC
        f, q = self.feature[cat], self.category[cat]
        is_ref = q == np.asarray(self.cardinalities)[f] - 1
        vals = np.zeros(len(f))
        vals[~is_ref] = -y * beta.beta_z[offsets[f[~is_ref]] + q[~is_ref]]
        w[cat] = vals
        t = r_i + lam * self.sink_distance[~cat]
        with np.errstate(divide="ignore", invalid="ignore"):
            w[~cat] = np.where(t > 0, -np.log(np.expm1(np.maximum(t, 1e-300))), -np.inf)
        return w

    def paths(self) -> Iterator[list[int]]:
        """Every source-to-sink path as a list of arc indices."""
        out_arcs: dict[int, list[int]] = {v: [] for v in range(self.n_vertices)}
        for a, s in enumerate(self.src.tolist()):
            out_arcs[s].append(a)
        stack = [(self.source, [])]
        while stack:
            v, path = stack.pop()
            if v == self.sink:
                yield path
                continue
            for a in reversed(out_arcs[v]):
                stack.append((int(self.dst[a]), path + [a]))

    def decode_path(self, path: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(self.category[a]) for a in path if self.kind[a] == CATEGORY_ARC)

    def to_dot(self) -> str:
        lines = ["digraph separation {", "  rankdir=LR;"]
        for v in range(self.n_vertices):
            k, d = self.vertex(v)
            label = "sink" if v == self.sink else f"({k},{d:g})"
            lines.append(f'  v{v} [label="{label}"];')
        for a in range(self.n_arcs):
            if self.kind[a] == CATEGORY_ARC:
                lab = f"-y*bz[{self.feature[a]}][{self.category[a]}]"
            else:
                lab = f"-log(exp(r+lam*{self.sink_distance[a]:g})-1)"
            lines.append(f'  v{self.src[a]} -> v{self.dst[a]} [label="{lab}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_graph(pattern: Sequence[int], space: StateSpace, cardinalities: Sequence[int]) -> SeparationGraph:
    """DAG for a datapoint whose categorical codes are ``pattern``."""
    pattern = tuple(int(q) for q in pattern)
    cards = tuple(int(k) for k in cardinalities)
    if len(pattern) != space.m or len(cards) != space.m:
        raise ValueError("pattern, cardinalities and state space disagree on m")
    sizes = [len(layer) for layer in space.layers] + [1]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    src, dst, feat, cat = [], [], [], []
    for k in range(space.m):
        prev = np.array(space.layers[k])
        nxt = np.array(space.layers[k + 1])
        a = cards[k]
        p = np.repeat(np.arange(len(prev)), a)
        q = np.tile(np.arange(a), len(prev))
        target = prev[p] + np.where(q == pattern[k], 0, space.delta_keys[k]).astype(prev.dtype)
        t = np.searchsorted(nxt, target)
        src.append(offsets[k] + p)
        dst.append(offsets[k + 1] + t)
        feat.append(np.full(len(p), k))
        cat.append(q)
    last = space.m
    n_last = sizes[last]
    src.append(offsets[last] + np.arange(n_last))
    dst.append(np.full(n_last, offsets[last + 1]))
    feat.append(np.full(n_last, -1))
    cat.append(np.full(n_last, -1))
    n_cat = sum(len(s) for s in src[:-1])
    kind = np.concatenate([np.zeros(n_cat, dtype=int), np.ones(n_last, dtype=int)])
    sink_d = np.concatenate([np.full(n_cat, np.nan), space.distances(last)])
    return SeparationGraph(
        space, pattern, cards, offsets,
        np.concatenate(src).astype(int), np.concatenate(dst).astype(int), kind,
        np.concatenate(feat).astype(int), np.concatenate(cat).astype(int), sink_d,
    )


def longest_path_value(G: SeparationGraph, lam: float, r_i: float, beta: Coefficients, y: int) -> float:
    """Longest source-to-sink path under the numeric weights.

    Returns ``inf`` (with a logged diagnostic) when some sink arc has
    ``r_i + lam * d <= 0``: its weight is unbounded and the datapoint's
    constraint cannot hold at this ``(lam, r_i)``.
    """
    w = G.arc_weights(beta, y, lam, r_i)
    if np.any(np.isneginf(w[G.kind == SINK_ARC])):
        log.warning("sink arc outside log domain: r=%g, lam=%g", r_i, lam)
        return math.inf
    order = G.topological_order()
    out_arcs: dict[int, list[int]] = {v: [] for v in range(G.n_vertices)}
    for a, s in enumerate(G.src.tolist()):
        out_arcs[s].append(a)
    best = np.full(G.n_vertices, -np.inf)
    best[G.source] = 0.0
    for v in order:
        if best[v] == -np.inf:
            continue
        for a in out_arcs[v]:
            t = G.dst[a]
            cand = best[v] + w[a]
            if cand > best[t]:
                best[t] = cand
    return float(best[G.sink])


@dataclass(frozen=True)
class DualConstraints:
    """Potential-difference constraints for one datapoint's graph.

    Row ``e`` states ``mu[target[e]] - mu[source[e]] >= w(e)``; the coupling
    row states ``y_i * (bx . x_i + b0) >= mu[sink] - mu[source]``.
    """

    datapoint: int
    y: int
    n_potentials: int
    source: np.ndarray
    target: np.ndarray
    kind: np.ndarray
    feature: np.ndarray
    category: np.ndarray
    sink_distance: np.ndarray
    coupling: tuple[int, int]

    @property
    def n_constraints(self) -> int:
        return len(self.source) + 1

    def check(self, mu, beta: Coefficients, x, lam: float, r_i: float, G: SeparationGraph, tol: float = 1e-9) -> bool:
        mu = np.asarray(mu, dtype=float)
        w = G.arc_weights(beta, self.y, lam, r_i)
        ok = np.all(mu[self.target] - mu[self.source] >= w - tol)
        lhs = self.y * (float(np.asarray(x) @ beta.beta_x) + beta.intercept)
        return bool(ok and lhs >= mu[self.coupling[1]] - mu[self.coupling[0]] - tol)


def emit_dual_constraints(G: SeparationGraph, i: int, y: int) -> DualConstraints:
    return DualConstraints(
        i, int(y), G.n_vertices, G.src, G.dst, G.kind, G.feature, G.category, G.sink_distance,
        (G.source, G.sink),
    )


def potentials(G: SeparationGraph, lam: float, r_i: float, beta: Coefficients, y: int) -> np.ndarray:
    """Longest-path distances from the source, a feasible choice of ``mu``."""
    w = G.arc_weights(beta, y, lam, r_i)
    mu = np.full(G.n_vertices, -np.inf)
    mu[G.source] = 0.0
    order = np.argsort(G.src, kind="stable")
    for a in order:
        s, t = G.src[a], G.dst[a]
        mu[t] = max(mu[t], mu[s] + w[a])
    return mu


class GraphCache:
    """Graphs keyed by categorical pattern; datapoints sharing ``z_i`` share a structure."""

    def __init__(self, space: StateSpace, cardinalities: Sequence[int]):
        self.space = space
        self.cardinalities = tuple(cardinalities)
        self._graphs: dict[tuple, SeparationGraph] = {}

    def __getitem__(self, pattern) -> SeparationGraph:
        key = tuple(int(q) for q in pattern)
        if key not in self._graphs:
            self._graphs[key] = build_graph(key, self.space, self.cardinalities)
        return self._graphs[key]

    def __len__(self) -> int:
        return len(self._graphs)


def graph_sizes(ds: EncodedDataset, space: StateSpace) -> tuple[int, int]:
    """Total vertices and arcs over all datapoint graphs.

    Every datapoint graph has the same shape (only the arc labels depend on
    ``z_i``), so the totals are ``N`` times the size of one graph.
    """
    cards = ds.schema.cardinalities
    arcs = sum(len(space.layers[k]) * cards[k] for k in range(space.m)) + len(space.layers[space.m])
    return ds.N * space.size, ds.N * arcs
