"""Acceptance criteria, each run at its stated tolerance and budget.

Every test records one PASS/FAIL line, printed in the session summary.
Training artefacts go to a temporary directory unless PRAE_ACCEPTANCE_DIR
names a directory to keep them in.
"""
import itertools
import os
import time

import numpy as np
import pytest

from conftest import numeric_grad, numeric_grad_smooth, record_criterion, rel_error
from published import MODELNET40_MEAN_IMPROVEMENT, entries
from test_loss import _nn_signature
from test_model import _signature, _tiny_model
from test_tensor import _check_net, _layer_cases
from prae.checkpoint import file_crc, load_checkpoint
from prae.data import normalize
from prae.harness.audit import audit_params
from prae.harness.compare import compare_rows
from prae.harness.config import ExperimentConfig
from prae.harness.evaluate import evaluate_checkpoint
from prae.harness.sweep import read_sweep_csv, sweep
from prae.harness.train import evaluate_model, prepare_dataset, train
from prae.loss import batch_multihead_chamfer_loss, multihead_chamfer_loss
from prae.metrics import (
    SPATIAL_INDEX,
    chamfer,
    emd_approx,
    emd_exact,
    f1_score,
    hausdorff,
    nearest_neighbors,
)
from prae.metrics.nn import sq_dist_block
from prae.tensor import (
    AdamState,
    BatchNorm,
    Dense,
    MaxPoolPoints,
    PointwiseLinear,
    ReLU,
    Sequential,
    adam_step,
    he_init,
    xavier_uniform_init,
)

pytestmark = pytest.mark.filterwarnings("ignore:selecting the best epoch")

EPOCHS = 30
SWEEP_DEPTHS = (1, 2, 3, 4, 5)
HEADS = (1, 2)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    keep = os.environ.get("PRAE_ACCEPTANCE_DIR")
    if keep:
        os.makedirs(keep, exist_ok=True)
        return keep
    return str(tmp_path_factory.mktemp("acceptance"))


def desk_config(out, **kw):
    """Light-AE, 8 categories x 50 synthetic shapes, K = 256, 30 epochs."""
    return ExperimentConfig(backbone="LightAE", depth=3, heads=1, points=256, epochs=EPOCHS,
                            synthetic_per_category=50, output_dir=out).replace(**kw)


@pytest.fixture(scope="module")
def desk_sweep(workdir):
    """The single-vs-multi sweep; its depth-3 cells are the desk-scale runs."""
    t0 = time.perf_counter()
    res = sweep(desk_config(os.path.join(workdir, "sweep")), SWEEP_DEPTHS, HEADS,
                os.path.join(workdir, "sweep"), resume=True)
    res.elapsed = time.perf_counter() - t0
    return res


def _cell(res, depth, heads):
    return next(r for r in res.records
                if r.config["depth"] == depth and r.config["heads"] == heads)


# ---------------------------------------------------------------- 1

def test_criterion_1_parameter_counts():
    t0 = time.perf_counter()
    rows = audit_params()
    elapsed = time.perf_counter() - t0
    bad = [(r.backbone, r.depth, r.heads, r.millions, r.published) for r in rows if not r.ok]
    ok = len(rows) == 30 and not bad and elapsed < 1.0
    record_criterion(1, "parameter-count audit", ok,
                     f"{30 - len(bad)}/30 within 0.01 M in {elapsed * 1e3:.1f} ms")
    assert ok, bad


# ---------------------------------------------------------------- 2

def _brute_emd(P, Q):
    C = sq_dist_block(P, Q)
    n = len(P)
    perms = np.array(list(itertools.permutations(range(n))))
    return float((C[np.arange(n), perms].sum(axis=1) / n).min())


def test_criterion_2_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    emd_mismatch = 0
    for k in range(200):
        n = int(rng.integers(2, 9))
        P, Q = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        emd_mismatch += emd_exact(P, Q).total_cost != _brute_emd(P, Q)
    nn_worst, idx_mismatch = 0.0, 0
    for k in range(100):
        n = int(rng.integers(1, 101))
        P, Q = rng.normal(size=(int(rng.integers(1, 101)), 3)), rng.normal(size=(n, 3))
        db, ib = nearest_neighbors(P, Q)
        dk, ik = nearest_neighbors(P, Q, SPATIAL_INDEX)
        nn_worst = max(nn_worst, float(np.abs(db - dk).max()))
        idx_mismatch += not np.array_equal(ib, ik)
    approx_worst = 0.0
    for k in range(100):
        n = int(rng.integers(2, 65))
        P, Q = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        exact = emd_exact(P, Q).total_cost
        approx_worst = max(approx_worst, (emd_approx(P, Q).total_cost - exact) / exact)
    elapsed = time.perf_counter() - t0
    ok = (emd_mismatch == 0 and idx_mismatch == 0 and nn_worst <= 1e-12
          and approx_worst < 0.02 and elapsed < 60)
    record_criterion(2, "metric oracle equivalence", ok,
                     f"EMD exact mismatches {emd_mismatch}/200, kd-tree max |d| error "
                     f"{nn_worst:.1e} ({idx_mismatch} index mismatches), auction worst gap "
                     f"{approx_worst:.2e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_hand_fixtures():
    t0 = time.perf_counter()
    origin, two = [[0.0, 0, 0]], [[0.0, 0, 0], [1.0, 0, 0]]
    f1, p, r, tau = f1_score([[0.0, 0, 0], [5.0, 0, 0]], [[0.0, 0, 0], [10.0, 0, 0]])
    W = np.array([[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]])
    dense = Dense(3, 2, dtype=np.float64)
    dense.params["weight"][...] = W
    x, y = np.array([[1.0, 2.0, -1.0]]), np.array([[0.5, 1.0]])
    dense.backward(2 * (dense.forward(x) - y))
    w = np.array([0.0])
    adam_step(w, np.array([3.0]), AdamState(lr=0.01))
    shifted = normalize(5.0 + 2.0 * np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0],
                                                  [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0]]))
    checks = {
        "CD point pair": chamfer(origin, [[3.0, 4.0, 0.0]]) - 50.0,
        "CD two vs one": chamfer(two, origin) - 0.5,
        "HD two vs one": hausdorff(two, origin) - 1.0,
        "EMD two pairs": emd_exact([[0.0, 0, 0], [2.0, 0, 0]],
                                   [[1.0, 0, 0], [3.0, 0, 0]]).total_cost - 1.0,
        "F1": f1 - 0.5,
        "precision": p - 0.5,
        "recall": r - 0.5,
        "tau": tau - 0.1,
        "dense gradient": np.abs(dense.grads["weight"]
                                 - 2 * np.outer(W @ x[0] - y[0], x[0])).max(),
        "Adam first step": w[0] + 0.01,
        "normalised centroid": np.abs(shifted.mean(axis=0)).max(),
        "normalised radius": np.linalg.norm(shifted, axis=1).max() - 1.0,
    }
    elapsed = time.perf_counter() - t0
    worst = max(abs(float(v)) for v in checks.values())
    ok = worst <= 1e-9 and elapsed < 1.0
    record_criterion(3, "hand-computed fixtures", ok,
                     f"{len(checks)} fixtures, worst deviation {worst:.1e}")
    assert ok, checks


# ---------------------------------------------------------------- 4

def test_criterion_4_gradients():
    t0 = time.perf_counter()
    worst = {}
    for kind in ("PointwiseLinear", "Dense", "BatchNorm3d", "BatchNorm2d", "ReLU",
                 "MaxPoolPoints"):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            layer, shape = _layer_cases(rng)[kind]
            x = rng.uniform(-1, 1, size=shape)
            worst[kind] = max(worst.get(kind, 0.0), max(_check_net(Sequential([layer]), x, rng)))
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        l1, l2 = PointwiseLinear(3, 6, dtype=np.float64), Dense(6, 4, dtype=np.float64)
        he_init(l1, rng)
        xavier_uniform_init(l2, rng)
        net = Sequential([l1, BatchNorm(6, dtype=np.float64), ReLU(), MaxPoolPoints(), l2])
        worst["3-layer net"] = max(worst.get("3-layer net", 0.0),
                                   max(_check_net(net, rng.uniform(-1, 1, (3, 3, 5)), rng)))

    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = _tiny_model(seed, heads=(1, 2, 4)[seed % 3])
        x = rng.uniform(-1, 1, size=(2, 3, 32))
        gt = x.transpose(0, 2, 1)
        last = {}

        def f():
            last["h"] = m.forward(x, train=True)
            return batch_multihead_chamfer_loss(gt, last["h"])[0]

        m.zero_grad()
        _, grads = batch_multihead_chamfer_loss(gt, m.forward(x, train=True))
        m.backward(grads)
        analytic = {n: layer.grads[k].copy() for n, _, layer, k in m.named_params()}
        for name, p, _, _ in m.named_params():
            num, valid = numeric_grad_smooth(f, lambda: _signature(m, gt, last["h"]), p)
            worst["encoder-decoder"] = max(worst.get("encoder-decoder", 0.0),
                                           rel_error(analytic[name][valid], num[valid]))

    for M in (1, 2, 4):
        key = f"loss M={M}"
        for seed in range(20):
            rng = np.random.default_rng(seed)
            P = rng.uniform(-1, 1, size=(16, 3))
            heads = [rng.uniform(-1, 1, size=(8, 3)) for _ in range(M)]
            _, grads = multihead_chamfer_loss(P, heads)
            for i, Q in enumerate(heads):
                num, valid = numeric_grad_smooth(lambda: multihead_chamfer_loss(P, heads)[0],
                                                 lambda: _nn_signature(P, heads), Q)
                worst[key] = max(worst.get(key, 0.0), rel_error(grads[i][valid], num[valid]))
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top < 1e-3 and elapsed < 120
    record_criterion(4, "gradient correctness", ok,
                     f"{len(worst)} groups x 20 instances, worst relative error {top:.1e}, "
                     f"{elapsed:.1f} s")
    assert ok, worst


# ---------------------------------------------------------------- 5

def test_criterion_5_single_head_reduction():
    rng = np.random.default_rng(55)
    equal = 0
    for _ in range(100):
        P = rng.normal(size=(int(rng.integers(1, 200)), 3))
        Q = rng.normal(size=(int(rng.integers(1, 200)), 3))
        equal += multihead_chamfer_loss(P, [Q])[0] == chamfer(P, Q)
    ok = equal == 100
    record_criterion(5, "single-head loss equals Chamfer", ok, f"{equal}/100 bit-identical")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_desk_scale_training(desk_sweep):
    details, ok = [], True
    for heads in HEADS:
        rec = _cell(desk_sweep, 3, heads)
        loss_ratio = rec.train_loss[-1] / rec.train_loss[0]
        cd_gain = rec.initial_metrics["cd"] / rec.best_metrics["cd"]
        good = (len(rec.train_loss) == EPOCHS and loss_ratio < 0.10
                and np.isfinite(rec.best_metrics["cd"]) and cd_gain >= 5.0
                and rec.wall_clock < 900)
        ok &= good
        details.append(f"M={heads}: final/first loss {loss_ratio:.3f}, untrained/best test CD "
                       f"{cd_gain:.1f}x, {rec.wall_clock:.0f} s")
    record_criterion(6, "training sanity at desk scale", ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_7_determinism(desk_sweep, workdir):
    ref = _cell(desk_sweep, 3, 1)
    again = train(desk_config(os.path.join(workdir, "repeat")))
    same_loss = again.train_loss == ref.train_loss
    same_metrics = again.eval_metrics == ref.eval_metrics
    same_crc = again.best_checkpoint_crc == ref.best_checkpoint_crc == file_crc(
        ref.best_checkpoint)
    ok = same_loss and same_metrics and same_crc
    record_criterion(7, "determinism", ok,
                     f"loss curves identical: {same_loss}, best checkpoint CRC "
                     f"{again.best_checkpoint_crc:08x} vs {ref.best_checkpoint_crc:08x}")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_8_checkpoint_round_trip(desk_sweep, workdir):
    ref = _cell(desk_sweep, 3, 1)
    cfg = desk_config(os.path.join(workdir, "split"))
    ds = prepare_dataset(cfg)
    ck = load_checkpoint(ref.best_checkpoint)
    reloaded = evaluate_checkpoint(ref.best_checkpoint, ds, "test", cfg.emd_mode).as_dict()
    direct = evaluate_model(ck.model, ds.subset("test"), cfg.emd_mode)[0].as_dict()
    round_trip = reloaded == ref.best_metrics == direct

    train(cfg.replace(epochs=EPOCHS // 2), dataset=ds)
    resumed = train(cfg, resume_from=os.path.join(cfg.output_dir, "last.ckpt"), dataset=ds)
    split_ok = (resumed.train_loss == ref.train_loss and resumed.eval_metrics == ref.eval_metrics
                and resumed.best_checkpoint_crc == ref.best_checkpoint_crc
                and file_crc(resumed.final_checkpoint) == file_crc(ref.final_checkpoint))
    ok = round_trip and split_ok
    record_criterion(8, "checkpoint round trip", ok,
                     f"reloaded metrics identical: {round_trip}; "
                     f"{EPOCHS // 2}+{EPOCHS - EPOCHS // 2} split run identical: {split_ok}")
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_9_comparison_procedure(desk_sweep):
    light = compare_rows(entries(("LightAE",)))
    d3 = light.rows[2]
    fixture_ok = round(d3.delta["cd"], 2) == -0.11 and round(d3.improvement_pct["cd"], 2) == 3.34
    mean = compare_rows(entries()).mean_improvement_pct
    fixture_ok &= all(round(mean[m], 2) == v for m, v in MODELNET40_MEAN_IMPROVEMENT.items())

    rows = read_sweep_csv(desk_sweep.csv_path)
    table = desk_sweep.comparison
    sweep_ok = (not desk_sweep.failures and len(rows) == len(SWEEP_DEPTHS) * len(HEADS)
                and table is not None and len(table.rows) == len(SWEEP_DEPTHS)
                and all(np.isfinite(r[m]) for r in rows for m in ("cd", "emd", "hd", "f1"))
                and len(desk_sweep.plot_paths) == 2
                and all(os.path.getsize(p) > 0 for p in desk_sweep.plot_paths)
                and desk_sweep.elapsed < 3600)
    ok = fixture_ok and sweep_ok
    synthetic = "n/a" if table is None else ", ".join(
        f"{m.upper()} {v:+.2f}%" for m, v in table.mean_improvement_pct.items())
    record_criterion(9, "comparison procedure (published averages not gated)", ok,
                     f"fixture depth-3 CD delta {d3.delta['cd']:+.2f} ({d3.improvement_pct['cd']:+.2f}%); "
                     f"sweep {len(rows)} cells in {desk_sweep.elapsed:.0f} s; synthetic mean "
                     f"improvement {synthetic}")
    if table is not None:
        print(table.render())
    assert ok
