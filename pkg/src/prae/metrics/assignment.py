"""Square linear assignment: exact shortest augmenting path and an auction.

Both solvers minimise the total cost of a bijection rows -> columns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ConvergenceError, DimensionError


@dataclass
class Assignment:
    """``mapping[i]`` is the column assigned to row ``i``; ``total_cost`` is
    the mean assigned cost (sum divided by n)."""

    mapping: np.ndarray
    total_cost: float


def _check_square(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got {list(cost.shape)}")
    return cost


def mean_assignment_cost(cost, mapping):
    n = cost.shape[0]
    return float(cost[np.arange(n), mapping].sum() / n)


def solve_exact(cost):
    """Optimal assignment by successive shortest augmenting paths with
    dual potentials (Hungarian / Jonker-Volgenant family), O(n^3).

    Returns the row -> column mapping as an int array.
    """
    cost = _check_square(cost)
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    INF = np.inf
    # 1-based columns; column 0 is the virtual root of each search
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cols = np.nonzero(free)[0]
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            upd = cols[better]
            minv[upd] = cur[better]
            way[upd] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            used_cols = np.nonzero(used)[0]
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[cols] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    mapping = np.empty(n, dtype=np.int64)
    mapping[p[1:] - 1] = np.arange(n)
    return mapping


@njit(cache=True)
def _auction_kernel(benefit, eps_start, eps_final, scale_factor, max_bids):
    n = benefit.shape[0]
    prices = np.zeros(n)
    owner = np.empty(n, dtype=np.int64)      # item -> bidder
    assigned = np.empty(n, dtype=np.int64)   # bidder -> item
    stack = np.empty(n, dtype=np.int64)
    eps = eps_start
    bids = 0
    phases = 0
    while True:
        phases += 1
        owner[:] = -1
        assigned[:] = -1
        for k in range(n):
            stack[k] = n - 1 - k
        top = n
        while top > 0:
            bids += 1
            if bids > max_bids:
                return assigned, phases, bids, eps, False
            top -= 1
            i = stack[top]
            best = -np.inf
            second = -np.inf
            bj = -1
            for j in range(n):
                v = benefit[i, j] - prices[j]
                if v > best:
                    second = best
                    best = v
                    bj = j
                elif v > second:
                    second = v
            if second == -np.inf:
                second = best
            prices[bj] += best - second + eps
            prev = owner[bj]
            owner[bj] = i
            assigned[i] = bj
            if prev >= 0:
                assigned[prev] = -1
                stack[top] = prev
                top += 1
        if eps <= eps_final:
            break
        eps = max(eps / scale_factor, eps_final)
    return assigned, phases, bids, eps, True


def solve_auction(cost, epsilon=None, scale_factor=4.0, quantization=1e7, max_bids=100_000_000):
    """Auction algorithm with epsilon scaling (Gauss-Seidel bidding).

    Costs are quantised to integers on a grid of ``max_cost / quantization``.
    The first phase uses ``eps = max_int_cost / 8``; each later phase divides
    eps by ``scale_factor`` down to the final value. With the default final
    eps ``1 / (n + 1)`` the result is optimal for the quantised costs; an
    explicit ``epsilon`` (in the original cost units) bounds the mean-cost
    gap to the optimum by ``epsilon`` plus the quantisation step.

    Returns ``(mapping, diagnostics)``.
    """
    cost = _check_square(cost)
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), {"phases": 0, "bids": 0}
    cmax = float(cost.max())
    if n == 1 or cmax <= 0.0:
        return np.arange(n), {"phases": 0, "bids": 0}
    scale = quantization / cmax
    benefit = -np.rint(cost * scale)
    if epsilon is None:
        eps_final = 1.0 / (n + 1)
    else:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        eps_final = max(float(epsilon) * scale, 1.0 / (n + 1))
    eps_start = max(quantization / 8.0, eps_final)
    assigned, phases, bids, eps, ok = _auction_kernel(
        benefit, eps_start, eps_final, float(scale_factor), int(max_bids))
    diag = {"phases": int(phases), "bids": int(bids), "epsilon": eps / scale}
    if not ok:
        diag["unassigned"] = int((assigned < 0).sum())
        raise ConvergenceError("auction did not converge within the bid cap", diag)
    return assigned, diag
