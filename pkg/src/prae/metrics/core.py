"""Chamfer, Earth Mover's, Hausdorff and F1@1% between two point clouds.

All metrics return raw (unscaled) float64 values. Clouds are ``[N, 3]``
arrays; point order never affects a result.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import SizeMismatchError
from .assignment import Assignment, mean_assignment_cost, solve_auction, solve_exact
from .nn import BRUTE_FORCE, as_cloud, nearest_neighbors, sq_dist_block

F1_FRACTION = 0.01


def chamfer_terms(P, Q, backend=BRUTE_FORCE):
    """Per-point nearest-neighbour squared distances ``(P->Q, Q->P)``."""
    P, Q = as_cloud(P, "P"), as_cloud(Q, "Q")
    d_pq = nearest_neighbors(P, Q, backend)[0]
    d_qp = nearest_neighbors(Q, P, backend)[0]
    return d_pq, d_qp


def chamfer(P, Q, backend=BRUTE_FORCE):
    """Mean squared NN distance P->Q plus the same for Q->P."""
    d_pq, d_qp = chamfer_terms(P, Q, backend)
    return float(d_pq.mean() + d_qp.mean())


def hausdorff(P, Q, backend=BRUTE_FORCE):
    """Largest (unsquared) nearest-neighbour distance in either direction."""
    d_pq, d_qp = chamfer_terms(P, Q, backend)
    return float(np.sqrt(max(d_pq.max(), d_qp.max())))


def _pair_cost(P, Q, squared):
    P, Q = as_cloud(P, "P"), as_cloud(Q, "Q")
    if P.shape[0] != Q.shape[0]:
        raise SizeMismatchError(
            f"EMD needs equal-size clouds (got {P.shape[0]} and {Q.shape[0]}); "
            "resample one of them first"
        )
    C = sq_dist_block(P, Q)
    return C if squared else np.sqrt(C)


def emd_exact(P, Q, squared=True):
    """Optimal bijection between equal-size clouds.

    The cost is the mean of ``||p - phi(p)||^2`` (``squared=False`` uses plain
    Euclidean lengths). Exact O(n^3); intended for n up to a few hundred.
    """
    C = _pair_cost(P, Q, squared)
    mapping = solve_exact(C)
    return Assignment(mapping, mean_assignment_cost(C, mapping))


def emd_approx(P, Q, epsilon=None, squared=True):
    """Auction-based EMD. Returns an :class:`Assignment` whose cost is the
    true mean cost of the bijection found.

    With the default schedule the auction ends at eps = 1/(n+1) on costs
    quantised to 1e-7 of the largest pair cost, which leaves a gap of at most
    about ``2e-7 * max_cost`` on the mean. Passing ``epsilon`` (cost units)
    stops earlier with mean-cost gap at most ``epsilon`` plus that
    quantisation term.
    """
    C = _pair_cost(P, Q, squared)
    mapping, _ = solve_auction(C, epsilon=epsilon)
    return Assignment(mapping, mean_assignment_cost(C, mapping))


def f1_score(pred, gt, backend=BRUTE_FORCE, threshold=None, fraction=F1_FRACTION):
    """F1 at a distance threshold of ``fraction`` x the ground-truth bbox diagonal.

    Returns ``(f1, precision, recall, threshold)``. Precision is the share of
    predicted points within the threshold of ``gt``; recall the share of
    ``gt`` points within it of ``pred``. Pass ``threshold`` to override.
    """
    pred, gt = as_cloud(pred, "pred"), as_cloud(gt, "gt")
    if threshold is None:
        diag = float(np.linalg.norm(gt.max(axis=0) - gt.min(axis=0)))
        if diag == 0.0:
            warnings.warn("ground-truth bounding box is degenerate; F1 threshold is 0 "
                          "(only exact matches count)", RuntimeWarning, stacklevel=2)
        threshold = fraction * diag
    t2 = threshold * threshold
    d_pred = nearest_neighbors(pred, gt, backend)[0]
    d_gt = nearest_neighbors(gt, pred, backend)[0]
    precision = float(np.mean(d_pred <= t2))
    recall = float(np.mean(d_gt <= t2))
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return f1, precision, recall, float(threshold)


@dataclass
class MetricsReport:
    cd: float
    emd: float
    hd: float
    f1: float
    precision: float
    recall: float
    threshold_used: float

    def as_dict(self):
        return asdict(self)

    @classmethod
    def mean(cls, reports):
        reports = list(reports)
        if not reports:
            raise ValueError("no reports to average")
        cols = {k: float(np.mean([getattr(r, k) for r in reports], dtype=np.float64))
                for k in cls.__dataclass_fields__}
        return cls(**cols)


def evaluate_pair(pred, gt, emd_mode="exact", backend=BRUTE_FORCE, squared_emd=True,
                  exact_limit=512):
    """All four metrics for one predicted / ground-truth pair.

    ``emd_mode`` is ``"exact"``, ``"approx"``, ``"auto"`` (exact up to
    ``exact_limit`` points, auction beyond) or ``"skip"`` (EMD reported as NaN).
    """
    pred, gt = as_cloud(pred, "pred"), as_cloud(gt, "gt")
    d_pg, i_pg = nearest_neighbors(pred, gt, backend)
    d_gp, i_gp = nearest_neighbors(gt, pred, backend)
    cd = float(d_pg.mean() + d_gp.mean())
    hd = float(np.sqrt(max(d_pg.max(), d_gp.max())))
    diag = float(np.linalg.norm(gt.max(axis=0) - gt.min(axis=0)))
    thr = F1_FRACTION * diag
    t2 = thr * thr
    precision = float(np.mean(d_pg <= t2))
    recall = float(np.mean(d_gp <= t2))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    if emd_mode == "auto":
        emd_mode = "exact" if gt.shape[0] <= exact_limit else "approx"
    if emd_mode == "exact":
        emd = emd_exact(pred, gt, squared=squared_emd).total_cost
    elif emd_mode == "approx":
        emd = emd_approx(pred, gt, squared=squared_emd).total_cost
    elif emd_mode == "skip":
        emd = float("nan")
    else:
        raise ValueError(f"unknown emd_mode {emd_mode!r}")
    return MetricsReport(cd, emd, hd, f1, precision, recall, thr)
