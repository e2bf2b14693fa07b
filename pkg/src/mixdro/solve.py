"""Training routes for Wasserstein-robust mixed-feature logistic regression.

All routes minimize ``lam * eps + mean(r)`` subject to, for every datapoint
``i`` and categorical assignment ``z``,

    softplus(-y_i * (b0 + bx.x_i + bz.z)) - lam * dist(z, z_i) <= r_i

and ``|bx_j| <= lam * gamma_j``. They differ in how the exponentially many
assignment constraints are handled:

* ``monolithic``    -- enumerate every ``(i, z)``; small instances only.
* ``cutting-plane`` -- grow a working set with the DP separation oracle.
* ``graph``         -- replace each datapoint's family by longest-path
                       potentials on its state-transition DAG.
* ``subgradient``   -- projected subgradient descent on the value function,
                       no conic solver needed.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .calibration import AmbiguityParams
from .conic import Affine, ClarabelBackend, ConicProgram, SolverError, expcone_encode_softplus, get_backend
from .dataset import EncodedDataset, codes_to_onehot
from .graph import CATEGORY_ARC, GraphCache
from .model import Coefficients, sigmoid, softplus
from .separation import build_state_space, enumerate_assignments, separate_all

log = logging.getLogger(__name__)

ROUTES = ("monolithic", "cutting-plane", "graph", "subgradient")
MONOLITHIC_CAP = 200_000
COEFFICIENT_LIMIT = 1e6
R_MIN = 1e-9


class MonolithicCapError(ValueError):
    pass


@dataclass
class TrainReport:
    coefficients: Coefficients
    lam: float
    r: np.ndarray
    objective: float
    route: str
    status: str
    epsilon: float
    iterations: int = 0
    constraints_generated: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def recomputed_objective(self) -> float:
        return self.lam * self.epsilon + float(np.mean(self.r))

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "route": self.route,
            "status": self.status,
            "objective": self.objective,
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "r": [float(v) for v in self.r],
            "intercept": self.coefficients.intercept,
            "beta_x": self.coefficients.beta_x.tolist(),
            "beta_z": self.coefficients.beta_z.tolist(),
            "iterations": self.iterations,
            "constraints_generated": self.constraints_generated,
            "history": [list(map(float, h)) for h in self.history],
            "stats": self.stats,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d


class _Layout:
    """Shared variables ``lam``, ``r`` and ``beta`` of every conic route."""

    def __init__(self, prog: ConicProgram, ds: EncodedDataset, params: AmbiguityParams, r_lower=-np.inf):
        n, c = ds.schema.n, ds.schema.c
        self.n = n
        self.lam = prog.add_variables("lambda", 1, lower=0.0)
        self.r = prog.add_variables("r", ds.N, lower=r_lower)
        self.beta = prog.add_variables("beta", 1 + n + c)
        prog.add_objective(self.lam, params.epsilon)
        prog.add_objective(self.r, 1.0 / ds.N)
        if n:
            bx = self.beta[1:1 + n]
            lam_rep = np.repeat(self.lam, n)
            prog.add_linear(Affine.var(bx) - Affine.var(lam_rep, params.gamma), "<=")
            prog.add_linear(-Affine.var(bx) - Affine.var(lam_rep, params.gamma), "<=")

    def unpack(self, x: np.ndarray):
        lam = max(float(x[self.lam[0]]), 0.0)
        return lam, np.asarray(x[self.r], dtype=float), Coefficients.from_vector(x[self.beta], self.n)


def _add_assignment_constraints(prog, lay: _Layout, ds: EncodedDataset, params: AmbiguityParams, rows, codes) -> None:
    """Softplus constraints for the pairs ``(rows[k], codes[k])``."""
    rows = np.asarray(rows, dtype=int)
    codes = np.asarray(codes, dtype=int).reshape(len(rows), ds.schema.m)
    dist = (codes != ds.codes[rows]).astype(float) @ params.delta if ds.schema.m else np.zeros(len(rows))
    a = Affine.var(lay.r[rows]) + Affine.var(np.repeat(lay.lam, len(rows)), dist)
    y = ds.y[rows].astype(float)
    feats = np.hstack([np.ones((len(rows), 1)), ds.X[rows], codes_to_onehot(codes, ds.schema.cardinalities)])
    c = Affine.matrix(-y[:, None] * feats, lay.beta)
    expcone_encode_softplus(prog, a, c)


def _is_separable(ds: EncodedDataset) -> bool:
    """Whether some affine score puts every label on its correct side with margin 1."""
    feats = np.hstack([np.ones((ds.N, 1)), ds.X, ds.Z])
    res = linprog(
        np.zeros(feats.shape[1]),
        A_ub=-ds.y[:, None] * feats,
        b_ub=-np.ones(ds.N),
        bounds=[(None, None)] * feats.shape[1],
        method="highs",
    )
    return res.status == 0


def polish(lam: float, r, beta: Coefficients, ds: EncodedDataset, params: AmbiguityParams):
    """Smallest exactly feasible ``(lam, r)`` for fixed ``beta``, never below the input.

    Interior-point solutions satisfy the constraints only up to the solver
    tolerance; raising ``lam`` to the norm bound and then each ``r_i`` to
    its exact worst case removes that residue. Returns ``(lam, r, lift)``
    where ``lift`` is the objective increase.
    """
    r = np.asarray(r, dtype=float)
    lam_new = float(lam)
    if ds.schema.n:
        lam_new = max(lam_new, float(np.max(np.abs(beta.beta_x) / params.gamma)))
    viol, _, _ = separate_all(lam_new, r, beta, ds, build_state_space(params.delta, params.precision))
    r_new = r + np.maximum(viol, 0.0)
    lift = (lam_new - lam) * params.epsilon + float(np.mean(r_new - r))
    return lam_new, r_new, lift


def _finish(route, sol_status, lam, r, beta, ds, params, t0, **kw) -> TrainReport:
    status = "optimal" if sol_status == "optimal" else sol_status
    lam, r, lift = polish(lam, r, beta, ds, params)
    kw["stats"] = dict(kw.get("stats") or {}, polish_lift=lift)
    if np.max(np.abs(beta.as_vector()), initial=0.0) >= COEFFICIENT_LIMIT:
        status = "unbounded_coefficients"
    elif params.epsilon == 0.0 and _is_separable(ds):
        status = "unbounded_coefficients"
    objective = lam * params.epsilon + float(np.mean(r))
    return TrainReport(beta, lam, r, objective, route, status, params.epsilon, wall_time=time.perf_counter() - t0, **kw)


def _separable_report(route, ds, params, t0) -> TrainReport:
    log.warning("training data are linearly separable at eps=0; coefficients diverge")
    n, c = ds.schema.n, ds.schema.c
    return TrainReport(
        Coefficients.zeros(n, c), 0.0, np.zeros(ds.N), 0.0, route, "unbounded_coefficients",
        params.epsilon, wall_time=time.perf_counter() - t0,
    )


def assemble_monolithic(ds: EncodedDataset, params: AmbiguityParams, cap: int = MONOLITHIC_CAP):
    """Exponential-cone program with one softplus constraint per ``(i, z)``."""
    total = ds.N * math.prod(ds.schema.cardinalities)
    if total > cap:
        raise MonolithicCapError(
            f"monolithic formulation needs {total} assignment constraints (cap {cap}); "
            "use the graph or cutting-plane route"
        )
    allz = enumerate_assignments(ds.schema.cardinalities)
    prog = ConicProgram()
    lay = _Layout(prog, ds, params)
    rows = np.repeat(np.arange(ds.N), len(allz))
    codes = np.tile(allz, (ds.N, 1))
    _add_assignment_constraints(prog, lay, ds, params, rows, codes)
    return prog, lay


# Clarabel settings tried in order on the graph program. With its defaults
# Clarabel often stalls here; equilibration off and shorter steps keep the
# exponential-cone iterates away from the cone boundary.
# SCS comes last: slower, but it copes with the flat directions of eps = 0.
GRAPH_ATTEMPTS = (
    {"equilibrate": False, "max_step": 0.8},
    {"equilibrate": True, "max_step": 0.8},
    {"equilibrate": False, "max_step": 0.95},
    {"backend": "scs"},
)
# The enumerated programs usually solve with the defaults, so try those first.
ENUMERATED_ATTEMPTS = ({},) + GRAPH_ATTEMPTS


def _attempt_backend(kw: dict):
    kw = dict(kw)
    name = kw.pop("backend", "clarabel")
    return ClarabelBackend(**kw) if name == "clarabel" else get_backend(name)


def _solve_with_fallback(prog: ConicProgram, backend, attempts) -> tuple:
    """Solve with ``backend``, or try each setting in ``attempts`` in turn.

    Returns ``(solution or None, attempt log, last error)``.
    """
    backends = [get_backend(backend)] if backend is not None else [_attempt_backend(kw) for kw in attempts]
    tried, last_err = [], None
    for b in backends:
        try:
            sol = b.solve(prog)
        except SolverError as err:
            tried.append(f"{b.name}: {type(err).__name__}")
            log.info("solve attempt failed: %s", err)
            last_err = err
            continue
        tried.append(f"{b.name}: {sol.status}")
        return sol, tried, None
    return None, tried, last_err


def train_monolithic(ds: EncodedDataset, params: AmbiguityParams, backend=None, cap: int = MONOLITHIC_CAP) -> TrainReport:
    t0 = time.perf_counter()
    prog, lay = assemble_monolithic(ds, params, cap)
    sol, tried, err = _solve_with_fallback(prog, backend, ENUMERATED_ATTEMPTS)
    if sol is None:
        if params.epsilon == 0.0 and _is_separable(ds):
            return _separable_report("monolithic", ds, params, t0)
        raise err
    lam, r, beta = lay.unpack(sol.x)
    return _finish(
        "monolithic", sol.status, lam, r, beta, ds, params, t0,
        iterations=sol.iterations, constraints_generated=prog.n_expcones // 2,
        stats={"n_vars": prog.n_vars, "n_expcones": prog.n_expcones, "attempts": tried},
    )


def _parallel_separation(lam, r, beta, ds, space, threads: int):
    if threads <= 1 or ds.N < 2 * threads:
        return separate_all(lam, r, beta, ds, space)
    chunks = np.array_split(np.arange(ds.N), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: separate_all(lam, r, beta, ds, space, idx), chunks))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def cutting_plane_train(
    ds: EncodedDataset,
    params: AmbiguityParams,
    tol: float = 1e-7,
    max_iter: int = 5000,
    multi_cut: bool = False,
    backend=None,
    threads: int = 1,
    time_limit: float | None = None,
) -> TrainReport:
    """Constraint generation with the DP separation oracle.

    The working set starts with the nominal pairs ``(i, z_i)``. Each round
    solves the relaxation, separates every datapoint, and adds the single
    most violated pair (or, with ``multi_cut``, every violated pair). Bounds
    are ``LB = relaxation value`` and ``UB = LB + max violation``.
    """
    t0 = time.perf_counter()
    if backend is not None:
        backend = get_backend(backend)
    space = build_state_space(params.delta, params.precision)
    rows = list(range(ds.N))
    codes = [ds.codes[i].copy() for i in range(ds.N)]
    seen = {(i, tuple(ds.codes[i])) for i in range(ds.N)}
    lb, ub = -math.inf, math.inf
    history = []
    status = "iteration_limit"
    sol_status = "optimal"
    lam, r, beta = 0.0, np.zeros(ds.N), Coefficients.zeros(ds.schema.n, ds.schema.c)
    it = 0
    for it in range(1, max_iter + 1):
        prog = ConicProgram()
        lay = _Layout(prog, ds, params)
        _add_assignment_constraints(prog, lay, ds, params, rows, np.array(codes))
        sol, _, err = _solve_with_fallback(prog, backend, ENUMERATED_ATTEMPTS)
        if sol is None:
            if params.epsilon == 0.0 and _is_separable(ds):
                return _separable_report("cutting-plane", ds, params, t0)
            raise err
        sol_status = sol.status
        lam, r, beta = lay.unpack(sol.x)
        value = lam * params.epsilon + float(np.mean(r))
        viol, witness, _ = _parallel_separation(lam, r, beta, ds, space, threads)
        worst = int(np.argmax(viol))
        gap_v = float(viol[worst])
        lb = max(lb, value)
        ub = min(ub, value + max(gap_v, 0.0))
        history.append((lb, ub, gap_v))
        if ub - lb <= tol:
            status = "optimal"
            break
        picks = np.flatnonzero(viol > tol) if multi_cut else [worst]
        added = 0
        for i in picks:
            key = (int(i), tuple(int(q) for q in witness[i]))
            if key in seen:
                continue
            seen.add(key)
            rows.append(int(i))
            codes.append(witness[i].copy())
            added += 1
        if added == 0:
            status = "stalled"
            log.warning("cutting plane stalled with violation %.3g", gap_v)
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            status = "time_limit"
            break
    report = _finish(
        "cutting-plane", sol_status, lam, r, beta, ds, params, t0,
        iterations=it, constraints_generated=len(rows) - ds.N, history=history,
        stats={"working_set": len(rows), "multi_cut": bool(multi_cut)},
    )
    if report.status == "optimal" and status != "optimal":
        report.status = status
    return report


def _group_datapoints(ds: EncodedDataset, share_structure: bool):
    if not share_structure:
        return np.arange(ds.N), np.arange(ds.N)
    key = np.hstack([ds.codes, ds.y[:, None]])
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return first, inverse.ravel()


class _RowBuffer:
    """Accumulates linear rows given as (col, coef) column pairs; ``col < 0`` means absent."""

    def __init__(self):
        self.n = 0
        self.rows, self.cols, self.vals = [], [], []

    def add(self, *pairs):
        k = len(pairs[0])
        ids = self.n + np.arange(k)
        for col, coef in zip(pairs[::2], pairs[1::2]):
            col = np.asarray(col)
            keep = col >= 0
            self.rows.append(ids[keep])
            self.cols.append(col[keep])
            self.vals.append(np.asarray(coef, dtype=float)[keep])
        self.n += k

    def affine(self) -> Affine:
        return Affine(self.n, np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.vals))


def assemble_graph(ds: EncodedDataset, params: AmbiguityParams, share_structure: bool = True, compact: bool = True):
    """Exponential-cone program of the longest-path dual formulation.

    Datapoints with identical ``(z_i, y_i)`` share the potentials of their
    inner vertices (the category-arc weights coincide); every datapoint
    keeps its own sink arcs. The source potential is fixed at zero and the
    sink potential is replaced by the score ``y_i * (b0 + bx.x_i)`` it is
    coupled to, which is where it always settles at an optimum.

    With ``compact`` the parallel flip arcs leaving a vertex are merged into
    one row against a per-feature variable ``phi >= max_q w(q)``; this is the
    same feasible set in ``(mu, beta)`` with fewer rows.
    """
    space = build_state_space(params.delta, params.precision)
    cache = GraphCache(space, ds.schema.cardinalities)
    schema = ds.schema
    offsets = schema.offsets
    cards = np.asarray(schema.cardinalities, dtype=int)
    reps, inverse = _group_datapoints(ds, share_structure)

    prog = ConicProgram()
    lay = _Layout(prog, ds, params, r_lower=R_MIN)
    template = cache[ds.codes[reps[0]]]
    n_inner = template.n_vertices - 2
    mu = prog.add_variables("mu", len(reps) * n_inner)

    def mu_index(g, v):
        # source (vertex 0) is the constant 0 and returns -1
        return np.where(v == 0, -1, mu[0] + g * n_inner + v - 1) if n_inner else np.full(np.shape(v), -1)

    # category arcs: mu_s - mu_t + w <= 0 with w = -y * bz[q] (0 for the reference)
    bz0 = lay.beta[0] + 1 + schema.n
    phi = prog.add_variables("phi", len(reps) * schema.m) if compact else None
    pair_k = np.repeat(np.arange(schema.m), cards)
    pair_q = np.concatenate([np.arange(a) for a in cards]) if schema.m else np.zeros(0, int)
    rows_out = _RowBuffer()
    for g, rep in enumerate(reps):
        G = cache[ds.codes[rep]]
        y = float(ds.y[rep])
        arcs = np.flatnonzero(G.kind == CATEGORY_ARC)
        f, q = G.feature[arcs], G.category[arcs]
        bz_col = np.where(q == cards[f] - 1, -1, bz0 + offsets[f] + q)
        w_col, w_coef = bz_col, np.full(len(arcs), -y)
        if compact:
            # flips out of one vertex share a target; phi[g, k] bounds every flip weight
            match = q == np.asarray(G.pattern)[f]
            _, first = np.unique(G.src[arcs[~match]], return_index=True)
            flips = np.flatnonzero(~match)[first]
            keep = np.concatenate([np.flatnonzero(match), flips])
            w_col = np.concatenate([bz_col[match], phi[g * schema.m + f[flips]]])
            w_coef = np.concatenate([np.full(int(match.sum()), -y), np.ones(len(flips))])
            arcs = arcs[keep]
            alt = pair_q != np.asarray(G.pattern)[pair_k]
            kk, qq = pair_k[alt], pair_q[alt]
            rows_out.add(
                phi[g * schema.m + kk],
                -np.ones(len(kk)),
                np.where(qq == cards[kk] - 1, -1, bz0 + offsets[kk] + qq),
                np.full(len(kk), -y),
            )
        rows_out.add(mu_index(g, G.src[arcs]), np.ones(len(arcs)), mu_index(g, G.dst[arcs]), -np.ones(len(arcs)), w_col, w_coef)
    n_cat_rows = rows_out.n
    if n_cat_rows:
        prog.add_linear(rows_out.affine(), "<=")

    # sink arcs: softplus(mu_(m,d) - y_i * (b0 + bx.x_i)) <= r_i + lam * d.
    # The sink potential would only ever sit at its upper bound (the softplus
    # falls as it grows), so it is replaced by that bound.
    last = np.arange(template.layer_offsets[space.m], template.layer_offsets[space.m + 1])
    dists = space.distances(space.m)
    L = len(last)
    data_rows = np.repeat(np.arange(ds.N), L)
    v_last = np.tile(last, ds.N)
    mu_last = mu_index(inverse[data_rows], v_last)
    a = Affine.var(lay.r[data_rows]) + Affine.var(np.repeat(lay.lam, len(data_rows)), np.tile(dists, ds.N))
    k = len(data_rows)
    ks = np.arange(k)
    has_mu = mu_last >= 0
    feats = np.hstack([np.ones((ds.N, 1)), ds.X])
    score = Affine.matrix(-ds.y[:, None] * feats, lay.beta[: 1 + schema.n])
    c = Affine(k, ks[has_mu], mu_last[has_mu], np.ones(int(has_mu.sum()))) + score.take(data_rows)
    expcone_encode_softplus(prog, a, c)

    per_graph_vertices = template.n_vertices
    stats = {
        "graphs": int(len(reps)),
        "vertices_per_graph": int(per_graph_vertices),
        "arcs_per_graph": int(template.n_arcs),
        "total_vertices": int(ds.N * per_graph_vertices),
        "total_arcs": int(ds.N * template.n_arcs),
        "category_arc_rows": int(n_cat_rows),
        "sink_arc_rows": int(k),
        "shared_structure": bool(share_structure),
        "compact_arcs": bool(compact),
    }
    return prog, lay, stats


def graph_train(
    ds: EncodedDataset,
    params: AmbiguityParams,
    backend=None,
    share_structure: bool = True,
    compact: bool = True,
) -> TrainReport:
    """Solve the longest-path dual program in one conic solve.

    Without an explicit ``backend`` the solver settings in
    ``GRAPH_ATTEMPTS`` are tried in turn until one converges; the attempts
    made are recorded in ``stats["attempts"]``.
    """
    t0 = time.perf_counter()
    prog, lay, stats = assemble_graph(ds, params, share_structure, compact)
    sol, attempts, err = _solve_with_fallback(prog, backend, GRAPH_ATTEMPTS)
    if sol is None:
        if params.epsilon == 0.0 and _is_separable(ds):
            return _separable_report("graph", ds, params, t0)
        raise err
    lam, r, beta = lay.unpack(sol.x)
    stats = dict(stats, n_vars=prog.n_vars, n_expcones=prog.n_expcones, n_linear=prog.n_leq, attempts=attempts)
    return _finish(
        "graph", sol.status, lam, r, beta, ds, params, t0,
        iterations=sol.iterations, constraints_generated=stats["category_arc_rows"] + stats["sink_arc_rows"],
        stats=stats,
    )


def project_norm_epigraph(lam: float, beta_x, gamma) -> tuple[float, np.ndarray]:
    """Euclidean projection of ``(lam, beta_x)`` onto ``{|beta_x[j]| <= lam * gamma[j], lam >= 0}``.

    For a fixed ``t`` the best ``beta_x`` is the clip to ``[-t gamma, t gamma]``,
    leaving the convex piecewise quadratic
    ``(t - lam)^2 + sum_j (|beta_x[j]| - t gamma[j])_+^2`` whose breakpoints
    ``|beta_x[j]| / gamma[j]`` are scanned in sorted order.
    """
    beta_x = np.asarray(beta_x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if beta_x.size == 0:
        return max(lam, 0.0), beta_x.copy()
    a = np.abs(beta_x)
    brk = a / gamma
    order = np.argsort(brk)[::-1]
    # active set = indices with breakpoint > t; add them from the largest down
    num, den = lam, 1.0
    t = max(num / den, 0.0)
    if t < brk[order[0]]:
        t = None
        for pos, j in enumerate(order):
            num += gamma[j] * a[j]
            den += gamma[j] ** 2
            cand = num / den
            upper = brk[j]
            lower = brk[order[pos + 1]] if pos + 1 < len(order) else 0.0
            if lower <= cand <= upper:
                t = cand
                break
        if t is None or t < 0:
            t = 0.0
    t = max(t, 0.0)
    return t, np.clip(beta_x, -t * gamma, t * gamma)


def _value_and_subgradient(theta, ds, params, space, n):
    lam = theta[0]
    beta = Coefficients.from_vector(theta[1:], n)
    val, witness, dist = separate_all(lam, 0.0, beta, ds, space)
    F = lam * params.epsilon + float(np.mean(val))
    feats = np.hstack([np.ones((ds.N, 1)), ds.X, codes_to_onehot(witness, ds.schema.cardinalities)])
    score = feats @ beta.as_vector()
    w = -ds.y * sigmoid(-ds.y * score)
    grad = np.concatenate([[params.epsilon - float(np.mean(dist))], feats.T @ w / ds.N])
    return F, grad, val


def subgradient_train(
    ds: EncodedDataset,
    params: AmbiguityParams,
    steps: int = 3000,
    step_scales=(0.01, 0.1, 1.0, 10.0),
    tune_steps: int = 50,
) -> TrainReport:
    """Projected subgradient descent on the dual value function.

    Minimizes ``F(lam, beta) = lam * eps + mean_i max_z [loss_i(z) - lam * dist_i(z)]``
    over the norm epigraph, taking normalized steps ``c / sqrt(t)``. The
    scale ``c`` is picked from ``step_scales`` by the best value after
    ``tune_steps`` steps; the best iterate overall is returned.
    """
    t0 = time.perf_counter()
    n = ds.schema.n
    space = build_state_space(params.delta, params.precision)
    dim = 2 + n + ds.schema.c
    theta0 = np.zeros(dim)

    def project(theta):
        lam, bx = project_norm_epigraph(theta[0], theta[2:2 + n], params.gamma)
        out = theta.copy()
        out[0] = lam
        out[2:2 + n] = bx
        return out

    def run(scale, start, count, t_start, best):
        theta = start.copy()
        for t in range(t_start, t_start + count):
            F, g, _ = _value_and_subgradient(theta, ds, params, space, n)
            if F < best[0]:
                best = (F, theta.copy())
            norm = np.linalg.norm(g)
            if norm == 0.0:
                break
            theta = project(theta - (scale / math.sqrt(t)) * g / norm)
        return theta, best

    F0 = _value_and_subgradient(theta0, ds, params, space, n)[0]
    trials = []
    for scale in step_scales:
        theta, best = run(scale, theta0, tune_steps, 1, (F0, theta0.copy()))
        trials.append((best[0], scale, theta, best))
    _, scale, theta, best = min(trials, key=lambda tr: tr[0])
    remaining = max(steps - tune_steps, 0)
    theta, best = run(scale, theta, remaining, tune_steps + 1, best)

    F, theta = best
    lam = float(theta[0])
    beta = Coefficients.from_vector(theta[1:], n)
    _, _, val = _value_and_subgradient(theta, ds, params, space, n)
    report = TrainReport(
        beta, lam, np.asarray(val), float(F), "subgradient", "best_iterate", params.epsilon,
        iterations=steps, wall_time=time.perf_counter() - t0, stats={"step_scale": scale},
    )
    if np.max(np.abs(beta.as_vector())) >= COEFFICIENT_LIMIT:
        report.status = "unbounded_coefficients"
    elif params.epsilon == 0.0 and _is_separable(ds):
        report.status = "unbounded_coefficients"
    return report


def train(ds: EncodedDataset, params: AmbiguityParams, route: str = "graph", **kw) -> TrainReport:
    if route == "monolithic":
        return train_monolithic(ds, params, **kw)
    if route == "cutting-plane":
        return cutting_plane_train(ds, params, **kw)
    if route == "graph":
        return graph_train(ds, params, **kw)
    if route == "subgradient":
        return subgradient_train(ds, params, **kw)
    raise ValueError(f"unknown route {route!r}; choose from {ROUTES}")


def max_violation(report: TrainReport, ds: EncodedDataset, params: AmbiguityParams) -> float:
    """Largest constraint violation of a trained model, by exact separation."""
    space = build_state_space(params.delta, params.precision)
    viol, _, _ = separate_all(report.lam, report.r, report.coefficients, ds, space)
    bound = 0.0
    if ds.schema.n:
        bound = float(np.max(np.abs(report.coefficients.beta_x) / params.gamma) - report.lam)
    return max(float(np.max(viol)), bound)


__all__ = [
    "ROUTES", "TrainReport", "MonolithicCapError", "assemble_monolithic", "train_monolithic",
    "cutting_plane_train", "assemble_graph", "graph_train", "subgradient_train", "train",
    "project_norm_epigraph", "polish", "max_violation", "GRAPH_ATTEMPTS", "ENUMERATED_ATTEMPTS",
]
