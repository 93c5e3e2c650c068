"""Multi-head Chamfer loss and its gradient with respect to predicted points.

For ground truth ``P`` and head outputs ``Q_1..Q_M`` the loss is the mean of
the per-head Chamfer distances ``CD(P, Q_i)``. Each head is compared with the
whole ground-truth cloud; nothing partitions ``P`` between heads.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, EmptyInputError
from .metrics.nn import as_cloud, brute_force_nn


def chamfer_with_grad(P, Q):
    """Chamfer distance between ``P`` and ``Q`` and its gradient w.r.t. ``Q``.

    Nearest-neighbour correspondences are held fixed (ties go to the lowest
    index), which gives the usual subgradient.
    """
    d_pq, i_pq = brute_force_nn(P, Q)
    d_qp, i_qp = brute_force_nn(Q, P)
    value = d_pq.mean() + d_qp.mean()
    n_p, n_q = P.shape[0], Q.shape[0]
    grad = (2.0 / n_q) * (Q - P[i_qp])
    # every gt point pulls its nearest prediction towards itself
    np.add.at(grad, i_pq, (2.0 / n_p) * (Q[i_pq] - P))
    return float(value), grad


def multihead_chamfer_loss(gt, heads):
    """Loss and per-head point gradients for a single ground-truth cloud.

    ``gt`` is ``[N_P, 3]``; ``heads`` is a sequence of ``M`` arrays
    ``[K/M, 3]``. Returns ``(loss, grads)`` where ``grads[i]`` has the shape
    of ``heads[i]``.
    """
    P = as_cloud(gt, "gt")
    if len(heads) == 0:
        raise EmptyInputError("no head outputs")
    M = len(heads)
    size = None
    terms, grads = [], []
    for i, Q in enumerate(heads):
        Q = as_cloud(Q, f"head {i}")
        if size is not None and Q.shape[0] != size:
            raise DimensionError("all heads must emit the same number of points")
        size = Q.shape[0]
        value, g = chamfer_with_grad(P, Q)
        terms.append(value)
        grads.append(g / M)
    return sum(terms) / M, grads


def batch_multihead_chamfer_loss(gt_batch, head_batches):
    """Batch version: mean over clouds of :func:`multihead_chamfer_loss`.

    ``gt_batch`` is ``[B, N_P, 3]``; ``head_batches`` is a list of ``M``
    arrays ``[B, K/M, 3]``. Gradients are returned in float64 with the
    same layout as ``head_batches`` and already include the 1/B factor.
    """
    gt_batch = np.asarray(gt_batch)
    B = gt_batch.shape[0]
    if any(h.shape[0] != B for h in head_batches):
        raise DimensionError("head outputs and ground truth disagree on batch size")
    grads = [np.empty(h.shape, dtype=np.float64) for h in head_batches]
    losses = np.empty(B, dtype=np.float64)
    for b in range(B):
        loss, g = multihead_chamfer_loss(gt_batch[b], [h[b] for h in head_batches])
        losses[b] = loss
        for i in range(len(g)):
            grads[i][b] = g[i] / B
    return float(losses.mean()), grads


def loss_backward_into_decoder(head_grads, model):
    """Push point gradients through the model; returns the input gradient.

    Parameter gradients accumulate in ``model``'s layers. Each head only sees
    its own slice of the gradient; the encoder receives the sum over heads.
    """
    return model.backward([np.asarray(g, dtype=model.dtype) for g in head_grads])
