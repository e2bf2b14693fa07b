"""Solver-neutral exponential-cone programs and backend adapters.

A :class:`ConicProgram` is a linear objective over bounded variables with
blocks of affine constraints. Each block is stored as sparse triplets so
large programs can be assembled without per-row Python objects:

* ``eq``   -- ``expr == 0``
* ``leq``  -- ``expr <= 0``
* ``exp``  -- triples ``(a, b, c)`` with ``a >= b * exp(c / b)``, ``b > 0``

Backends translate to the ``A x + s = b, s in K`` standard form shared by
Clarabel and SCS.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    status = "error"


class SolverInfeasible(SolverError):
    status = "infeasible"


class SolverUnbounded(SolverError):
    status = "unbounded"


class SolverNumericalError(SolverError):
    status = "numerical_failure"


class Affine:
    """A stack of ``size`` affine expressions ``const[k] + sum_j coef * x[col]``."""

    __slots__ = ("size", "rows", "cols", "vals", "const")

    def __init__(self, size, rows=(), cols=(), vals=(), const=None):
        self.size = int(size)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=float)
        self.const = np.zeros(self.size) if const is None else np.broadcast_to(np.asarray(const, float), (self.size,)).copy()

    @classmethod
    def var(cls, idx, coef=1.0) -> "Affine":
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        k = len(idx)
        return cls(k, np.arange(k), idx, np.broadcast_to(np.asarray(coef, float), (k,)))

    @classmethod
    def constant(cls, values) -> "Affine":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(len(values), const=values)

    @classmethod
    def matrix(cls, M, var_idx) -> "Affine":
        """Rows of ``M @ x[var_idx]`` (structural zeros dropped)."""
        M = sp.coo_matrix(M)
        var_idx = np.asarray(var_idx, dtype=np.int64)
        keep = M.data != 0
        return cls(M.shape[0], M.row[keep], var_idx[M.col[keep]], M.data[keep])

    def __add__(self, other: "Affine") -> "Affine":
        if isinstance(other, (int, float, np.ndarray)):
            return Affine(self.size, self.rows, self.cols, self.vals, self.const + other)
        if other.size != self.size:
            raise ValueError(f"size mismatch {self.size} vs {other.size}")
        return Affine(
            self.size,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.vals, other.vals]),
            self.const + other.const,
        )

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(self.size, self.rows, self.cols, -self.vals, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-other)

    def __mul__(self, scale) -> "Affine":
        scale = np.broadcast_to(np.asarray(scale, float), (self.size,))
        return Affine(self.size, self.rows, self.cols, self.vals * scale[self.rows], self.const * scale)

    __rmul__ = __mul__

    def take(self, idx) -> "Affine":
        """Rows ``idx`` of this stack, repeats allowed."""
        idx = np.asarray(idx, dtype=np.int64)
        if len(self.rows):
            ncol = int(self.cols.max()) + 1
            M = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.size, ncol))[idx].tocoo()
            return Affine(len(idx), M.row, M.col, M.data, self.const[idx])
        return Affine(len(idx), const=self.const[idx])

    def evaluate(self, x) -> np.ndarray:
        out = self.const.copy()
        np.add.at(out, self.rows, self.vals * np.asarray(x)[self.cols])
        return out

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "rows": self.rows.tolist(),
            "cols": self.cols.tolist(),
            "vals": self.vals.tolist(),
            "const": self.const.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Affine":
        return cls(d["size"], d["rows"], d["cols"], d["vals"], d["const"])


@dataclass
class ConicProgram:
    n_vars: int = 0
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    names: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    objective_constant: float = 0.0
    eq: list = field(default_factory=list)
    leq: list = field(default_factory=list)
    exp: list = field(default_factory=list)

    def add_variables(self, name: str, size: int, lower=-np.inf, upper=np.inf) -> np.ndarray:
        idx = np.arange(self.n_vars, self.n_vars + size)
        self.lower.append(np.broadcast_to(np.asarray(lower, float), (size,)).copy())
        self.upper.append(np.broadcast_to(np.asarray(upper, float), (size,)).copy())
        self.names.setdefault(name, []).append((self.n_vars, size))
        self.n_vars += size
        return idx

    def add_objective(self, idx, coef) -> None:
        for j, c in zip(np.atleast_1d(idx), np.broadcast_to(np.asarray(coef, float), np.shape(np.atleast_1d(idx)))):
            self.objective[int(j)] = self.objective.get(int(j), 0.0) + float(c)

    def add_linear(self, expr: Affine, sense: str = "<=") -> None:
        if sense == "<=":
            self.leq.append(expr)
        elif sense == ">=":
            self.leq.append(-expr)
        elif sense == "==":
            self.eq.append(expr)
        else:
            raise ValueError(f"unknown sense {sense!r}")

    def add_expcone(self, a: Affine, b: Affine, c: Affine) -> None:
        """Require ``(a_k, b_k, c_k)`` in the exponential cone for every k."""
        if not a.size == b.size == c.size:
            raise ValueError("exponential-cone triples need equal sizes")
        self.exp.append((a, b, c))

    @property
    def n_eq(self) -> int:
        return sum(e.size for e in self.eq)

    @property
    def n_leq(self) -> int:
        return sum(e.size for e in self.leq)

    @property
    def n_expcones(self) -> int:
        return sum(t[0].size for t in self.exp)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self.objective.items():
            c[j] = v
        return c

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.lower:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(self.lower), np.concatenate(self.upper)

    def standard_form(self):
        """``(c, A, b, dims)`` with ``s = b - A x`` ordered zero, nonneg, exp cones."""
        n = self.n_vars
        lo, hi = self.bounds()
        parts_A, parts_b = [], []

        def stack(exprs, sign):
            # s = sign * expr  ->  A = -sign * F, b = sign * g
            for e in exprs:
                parts_A.append(sp.csc_matrix((-sign * e.vals, (e.rows, e.cols)), shape=(e.size, n)))
                parts_b.append(sign * e.const)

        stack(self.eq, -1.0)
        n_zero = self.n_eq
        stack(self.leq, -1.0)
        fin_lo = np.flatnonzero(np.isfinite(lo))
        fin_hi = np.flatnonzero(np.isfinite(hi))
        # x >= lo  <=>  lo - x <= 0 ; x <= hi  <=>  x - hi <= 0
        stack([Affine.var(fin_lo, -1.0) + lo[fin_lo], Affine.var(fin_hi, 1.0) - hi[fin_hi]], -1.0)
        n_nonneg = self.n_leq + len(fin_lo) + len(fin_hi)
        n_exp = self.n_expcones
        if n_exp:
            rows, cols, vals = [], [], []
            g = np.zeros(3 * n_exp)
            base = 0
            for a, b, c in self.exp:
                # solver cone order (x, y, z) with y * exp(x / y) <= z  ->  (c, b, a)
                k = a.size
                for pos, e in enumerate((c, b, a)):
                    rows.append(base + 3 * e.rows + pos)
                    cols.append(e.cols)
                    vals.append(e.vals)
                    g[base + 3 * np.arange(k) + pos] = e.const
                base += 3 * k
            rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            parts_A.append(sp.csc_matrix((-vals, (rows, cols)), shape=(3 * n_exp, n)))
            parts_b.append(g)
        A = sp.vstack(parts_A, format="csc") if parts_A else sp.csc_matrix((0, n))
        b = np.concatenate(parts_b) if parts_b else np.zeros(0)
        A.sum_duplicates()
        return self.objective_vector(), A, b, {"z": n_zero, "l": n_nonneg, "ep": n_exp}

    def max_violation(self, x) -> float:
        """Largest constraint violation at ``x`` (exp cones checked in log form)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for e in self.eq:
            worst = max(worst, float(np.max(np.abs(e.evaluate(x)), initial=0.0)))
        for e in self.leq:
            worst = max(worst, float(np.max(e.evaluate(x), initial=0.0)))
        lo, hi = self.bounds()
        if len(lo):
            worst = max(worst, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        for a, b, c in self.exp:
            av, bv, cv = a.evaluate(x), b.evaluate(x), c.evaluate(x)
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                gap = np.where(bv > 0, bv * np.exp(cv / bv) - av, np.where(cv <= 0, -av, np.inf))
            worst = max(worst, float(np.max(gap, initial=0.0)))
        return worst

    def to_dict(self) -> dict:
        lo, hi = self.bounds()
        enc = lambda v: [None if not np.isfinite(t) else float(t) for t in v]  # noqa: E731
        return {
            "n_vars": self.n_vars,
            "lower": enc(lo),
            "upper": enc(hi),
            "names": {k: [list(b) for b in v] for k, v in self.names.items()},
            "objective": {str(k): v for k, v in sorted(self.objective.items())},
            "objective_constant": self.objective_constant,
            "eq": [e.to_dict() for e in self.eq],
            "leq": [e.to_dict() for e in self.leq],
            "exp": [[t.to_dict() for t in trip] for trip in self.exp],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProgram":
        dec = lambda v, inf: np.array([inf if t is None else t for t in v], dtype=float)  # noqa: E731
        p = cls()
        p.n_vars = d["n_vars"]
        p.lower = [dec(d["lower"], -np.inf)]
        p.upper = [dec(d["upper"], np.inf)]
        p.names = {k: [tuple(b) for b in v] for k, v in d["names"].items()}
        p.objective = {int(k): float(v) for k, v in d["objective"].items()}
        p.objective_constant = d.get("objective_constant", 0.0)
        p.eq = [Affine.from_dict(e) for e in d["eq"]]
        p.leq = [Affine.from_dict(e) for e in d["leq"]]
        p.exp = [tuple(Affine.from_dict(t) for t in trip) for trip in d["exp"]]
        return p

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


def expcone_encode_softplus(prog: ConicProgram, a: Affine, c: Affine) -> tuple[np.ndarray, np.ndarray]:
    """Add ``log(1 + exp(c)) <= a`` row-wise.

    Uses ``exp(-a) <= u``, ``exp(c - a) <= v`` and ``u + v <= 1`` with fresh
    auxiliaries ``u, v``; returns their indices.
    """
    k = a.size
    u = prog.add_variables("u", k)
    v = prog.add_variables("v", k)
    one = Affine.constant(np.ones(k))
    prog.add_linear(Affine.var(u) + Affine.var(v) - 1.0, "<=")
    prog.add_expcone(Affine.var(u), one, -a)
    prog.add_expcone(Affine.var(v), one, c - a)
    return u, v


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    iterations: int = 0
    backend: str = ""


class ClarabelBackend:
    """Interior-point backend through the Clarabel Python bindings."""

    name = "clarabel"

    def __init__(self, tol: float = 1e-9, max_iter: int = 500, verbose: bool = False, equilibrate: bool = True,
                 max_step: float = 0.99):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose
        self.equilibrate = equilibrate
        self.max_step = max_step

    def solve(self, prog: ConicProgram) -> ConicSolution:
        import clarabel

        c, A, b, dims = prog.standard_form()
        n = prog.n_vars
        cones = []
        if dims["z"]:
            cones.append(clarabel.ZeroConeT(dims["z"]))
        if dims["l"]:
            cones.append(clarabel.NonnegativeConeT(dims["l"]))
        cones.extend(clarabel.ExponentialConeT() for _ in range(dims["ep"]))
        s = clarabel.DefaultSettings()
        s.verbose = self.verbose
        s.max_iter = self.max_iter
        s.tol_gap_abs = s.tol_gap_rel = self.tol
        s.tol_feas = self.tol
        s.tol_ktratio = 1e-7
        s.max_threads = 1
        s.equilibrate_enable = self.equilibrate
        s.max_step_fraction = self.max_step
        sol = clarabel.DefaultSolver(sp.csc_matrix((n, n)), c, A, b, cones, s).solve()
        status = str(sol.status)
        if status == "Solved":
            code = "optimal"
        elif status == "AlmostSolved":
            code = "optimal_inaccurate"
        elif "PrimalInfeasible" in status:
            raise SolverInfeasible(f"clarabel: {status}")
        elif "DualInfeasible" in status:
            raise SolverUnbounded(f"clarabel: {status}")
        else:
            raise SolverNumericalError(f"clarabel: {status}")
        x = np.array(sol.x)
        return ConicSolution(code, x, float(c @ x) + prog.objective_constant, int(sol.iterations), self.name)


class ScsBackend:
    """First-order splitting backend through SCS; used as an independent cross-check."""

    name = "scs"

    def __init__(self, eps: float = 1e-9, max_iters: int = 200000, verbose: bool = False):
        self.eps = eps
        self.max_iters = max_iters
        self.verbose = verbose

    def solve(self, prog: ConicProgram) -> ConicSolution:
        import scs

        c, A, b, dims = prog.standard_form()
        cones = {"z": dims["z"], "l": dims["l"], "ep": dims["ep"]}
        res = scs.solve(
            {"A": A, "b": b, "c": c},
            cones,
            verbose=self.verbose,
            eps_abs=self.eps,
            eps_rel=self.eps,
            max_iters=self.max_iters,
            acceleration_lookback=10,
        )
        status = res["info"]["status"]
        if status == "solved":
            code = "optimal"
        elif status == "solved_inaccurate":
            code = "optimal_inaccurate"
        elif status.startswith("infeasible"):
            raise SolverInfeasible(f"scs: {status}")
        elif status.startswith("unbounded"):
            raise SolverUnbounded(f"scs: {status}")
        else:
            raise SolverNumericalError(f"scs: {status}")
        x = np.asarray(res["x"])
        return ConicSolution(code, x, float(c @ x) + prog.objective_constant, int(res["info"]["iter"]), self.name)


BACKENDS = {"clarabel": ClarabelBackend, "scs": ScsBackend}


def get_backend(backend=None):
    if backend is None:
        return ClarabelBackend()
    if isinstance(backend, str):
        try:
            return BACKENDS[backend]()
        except KeyError:
            raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    return backend


def conic_backend_solve(prog: ConicProgram, backend=None) -> ConicSolution:
    solution = get_backend(backend).solve(prog)
    if solution.status != "optimal":
        log.warning("%s returned %s", solution.backend, solution.status)
    return solution
