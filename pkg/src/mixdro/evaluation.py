"""Shifted test-set generation and calibration / discrimination metrics."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .calibration import PerturbationModel
from .dataset import EncodedDataset
from .model import Coefficients, log_losses, predict_proba

CLAMP_MARGIN = 1e-6
SCENARIO_KINDS = ("none", "shift", "radius")


def perturb_dataset(ds: EncodedDataset, pm: PerturbationModel, seed) -> EncodedDataset:
    """Draw one shifted copy of ``ds``.

    Numerical features get independent Laplace(0, b_j) noise. A categorical
    value is kept with probability ``rho_z`` and otherwise replaced by a
    uniformly chosen different category. Labels are untouched.
    """
    if len(pm.b) != ds.schema.n or tuple(pm.cardinalities) != ds.schema.cardinalities:
        raise ValueError("perturbation model does not match the dataset schema")
    rng = np.random.default_rng(seed)
    X = ds.X + rng.laplace(0.0, 1.0, size=ds.X.shape) * pm.b
    codes = ds.codes.copy()
    for ell, a in enumerate(ds.schema.cardinalities):
        move = rng.random(ds.N) >= pm.rho_z[ell]
        step = rng.integers(1, a, size=ds.N)
        codes[:, ell] = np.where(move, (codes[:, ell] + step) % a, codes[:, ell])
    return EncodedDataset(X, codes, ds.y, ds.schema)


def adaptive_calibration_error(probs, labels, bins: int = 10) -> float:
    """Mean absolute gap between confidence and positive rate over equal-mass bins.

    Points are sorted by predicted probability (stable) and split into
    ``bins`` contiguous groups whose sizes differ by at most one; empty
    groups (fewer points than bins) are skipped. Every bin counts equally.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise ValueError("empty input")
    if probs.shape != labels.shape:
        raise ValueError("probabilities and labels differ in length")
    if bins < 1:
        raise ValueError("bins must be positive")
    order = np.argsort(probs, kind="stable")
    gaps = [
        abs(probs[idx].mean() - np.mean(labels[idx] == 1))
        for idx in np.array_split(order, bins)
        if len(idx)
    ]
    return float(np.mean(gaps))


def auc(probs, labels) -> float:
    """Mann-Whitney AUC; tied scores get average ranks."""
    probs = np.asarray(probs, dtype=float)
    pos = np.asarray(labels) == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(probs, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class PerturbationRun:
    """One evaluation scenario.

    ``kind`` is ``"none"`` (use the calibrated certainties), ``"shift"``
    (add ``value`` to every certainty) or ``"radius"`` (redraw each
    certainty uniformly within ``value`` of its calibrated level).
    """

    K: int = 200
    seed: int = 0
    kind: str = "none"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.kind == "radius" and self.value < 0:
            raise ValueError("radius must be nonnegative")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "expected"
        return f"{self.kind} {self.value:+g}" if self.kind == "shift" else f"radius {self.value:g}"


def shifted_model(pm: PerturbationModel, run: PerturbationRun, rng: np.random.Generator) -> PerturbationModel:
    """Perturbation model with the scenario's certainties, clamped into the valid domain."""
    if run.kind == "none":
        return pm
    if pm.rho_x is None or pm.u is None:
        raise ValueError("shifting certainties needs rho_x and u in the perturbation model")
    rho_x, rho_z = np.asarray(pm.rho_x, float), np.asarray(pm.rho_z, float)
    if run.kind == "shift":
        rho_x, rho_z = rho_x + run.value, rho_z + run.value
    else:
        rho_x = rng.uniform(rho_x - run.value, rho_x + run.value)
        rho_z = rng.uniform(rho_z - run.value, rho_z + run.value)
    floors = np.array([1.0 / k for k in pm.cardinalities])
    rho_x = np.clip(rho_x, CLAMP_MARGIN, 1.0 - CLAMP_MARGIN)
    rho_z = np.clip(rho_z, floors + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN) if len(floors) else rho_z
    b = -pm.u / np.log1p(-rho_x)
    return PerturbationModel(b, rho_z, pm.cardinalities, rho_x, pm.u)


@dataclass
class MetricReport:
    scenario: str
    K: int
    seed: int
    bins: int
    ace: list = field(default_factory=list)
    auc: list = field(default_factory=list)
    log_loss: list = field(default_factory=list)
    rho_x: list = field(default_factory=list)
    rho_z: list = field(default_factory=list)

    @property
    def worst_ace(self) -> float:
        return max(self.ace)

    @property
    def mean_ace(self) -> float:
        return float(np.mean(self.ace))

    @property
    def worst_auc(self) -> float:
        return min(self.auc)

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.auc))

    @property
    def worst_log_loss(self) -> float:
        return max(self.log_loss)

    @property
    def mean_log_loss(self) -> float:
        return float(np.mean(self.log_loss))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "K": self.K,
            "seed": self.seed,
            "metrics": {
                "ace": {"bins": self.bins, "binning": "equal-mass", "norm": "L1", "bin_weighting": "uniform"},
                "auc": {"ties": "average rank"},
                "log_loss": {"aggregate": "mean over points"},
            },
            "summary": {
                "worst_ace": self.worst_ace,
                "mean_ace": self.mean_ace,
                "worst_auc": self.worst_auc,
                "mean_auc": self.mean_auc,
                "worst_log_loss": self.worst_log_loss,
                "mean_log_loss": self.mean_log_loss,
            },
            "certainty": {"rho_x": self.rho_x, "rho_z": self.rho_z},
            "per_set": {"ace": self.ace, "auc": self.auc, "log_loss": self.log_loss},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "ace", "auc", "log_loss"])
        for k, row in enumerate(zip(self.ace, self.auc, self.log_loss)):
            w.writerow([k, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def _set_metrics(beta: Coefficients, test: EncodedDataset, pm: PerturbationModel, seed, bins: int):
    shifted = perturb_dataset(test, pm, seed)
    p = predict_proba(beta, shifted.X, shifted.Z)
    loss = float(np.mean(log_losses(beta, shifted.X, shifted.Z, shifted.y)))
    return adaptive_calibration_error(p, shifted.y, bins), auc(p, shifted.y), loss


def evaluate_under_shift(
    beta: Coefficients,
    test: EncodedDataset,
    run: PerturbationRun,
    pm: PerturbationModel,
    bins: int = 10,
    threads: int = 1,
) -> MetricReport:
    """Metrics of ``beta`` over ``run.K`` independently shifted copies of ``test``.

    Set ``k`` draws from its own child of ``SeedSequence(run.seed)``, so the
    report does not depend on ``threads``.
    """
    if len(beta.beta_x) != test.schema.n or len(beta.beta_z) != test.schema.c:
        raise ValueError("model coefficients do not match the test schema")
    children = np.random.SeedSequence(run.seed).spawn(run.K + 1)
    pm_run = shifted_model(pm, run, np.random.default_rng(children[0]))
    job = lambda s: _set_metrics(beta, test, pm_run, s, bins)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, children[1:]))
    else:
        rows = [job(s) for s in children[1:]]
    ace_v, auc_v, loss_v = (list(map(float, col)) for col in zip(*rows))
    rho_x = [] if pm_run.rho_x is None else [float(v) for v in pm_run.rho_x]
    return MetricReport(run.label, run.K, run.seed, bins, ace_v, auc_v, loss_v, rho_x, [float(v) for v in pm_run.rho_z])


def clean_metrics(beta: Coefficients, test: EncodedDataset, bins: int = 10) -> dict:
    p = predict_proba(beta, test.X, test.Z)
    return {
        "ace": adaptive_calibration_error(p, test.y, bins),
        "auc": auc(p, test.y),
        "log_loss": float(np.mean(log_losses(beta, test.X, test.Z, test.y))),
    }


__all__ = [
    "perturb_dataset", "adaptive_calibration_error", "auc", "PerturbationRun", "MetricReport",
    "shifted_model", "evaluate_under_shift", "clean_metrics",
]
