"""Training loop, per-epoch evaluation and best-epoch selection."""
from __future__ import annotations

import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..checkpoint import file_crc, load_checkpoint, save_checkpoint
from ..data import Dataset, batches, default_recipes, generate_synthetic, split_dataset
from ..errors import ConfigError, NonFiniteError
from ..formats import load_clouds
from ..loss import batch_multihead_chamfer_loss
from ..metrics import BRUTE_FORCE, MetricsReport, evaluate_pair
from ..model import build_model, count_parameters
from ..tensor import Adam
from .config import METRICS, ExperimentConfig, thread_cap

log = logging.getLogger(__name__)

LOWER_IS_BETTER = {"cd": True, "emd": True, "hd": True, "f1": False}


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    param_count: int
    train_loss: list = field(default_factory=list)
    eval_metrics: list = field(default_factory=list)
    test_metrics: list = field(default_factory=list)
    initial_metrics: dict | None = None
    best_epoch: int | None = None
    best_metrics: dict | None = None
    select_metric: str = "cd"
    select_split: str = "test"
    wall_clock: float = 0.0
    completed: bool = False
    best_checkpoint: str | None = None
    final_checkpoint: str | None = None
    best_checkpoint_crc: int | None = None

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def prepare_dataset(config: ExperimentConfig) -> Dataset:
    """Load or synthesise the dataset and assign splits."""
    if config.dataset:
        ds = load_clouds(config.dataset, config.dataset_format, normalized=True)
    else:
        recipes = default_recipes(config.synthetic_per_category, config.data_seed,
                                  tuple(config.synthetic_categories))
        ds = generate_synthetic(recipes, config.points, seed=config.data_seed)
    return split_dataset(ds, config.split_fractions, config.split_seed)


def evaluate_model(model, ds, emd_mode="auto", metrics=METRICS, batch_size=32, threads=1,
                   backend=BRUTE_FORCE, squared_emd=True):
    """Average metrics of ``model.reconstruct`` against every cloud in ``ds``.

    ``model`` is anything with ``reconstruct([B, 3, N]) -> [B, K, 3]``.
    Disabled metrics are reported as NaN. Returns ``(mean_report, per_cloud)``.
    """
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    if "emd" not in metrics:
        emd_mode = "skip"
    preds = []
    for s in range(0, len(ds), batch_size):
        batch = np.ascontiguousarray(ds.clouds[s:s + batch_size].transpose(0, 2, 1))
        preds.append(np.asarray(model.reconstruct(batch)))
    preds = np.concatenate(preds)

    def one(i):
        return evaluate_pair(preds[i], ds.clouds[i], emd_mode=emd_mode, backend=backend,
                             squared_emd=squared_emd)

    n_threads = thread_cap(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            reports = list(pool.map(one, range(len(ds))))
    else:
        reports = [one(i) for i in range(len(ds))]
    mean = MetricsReport.mean(reports)
    for name in METRICS:
        if name not in metrics:
            setattr(mean, name, float("nan"))
    return mean, reports


def _better(metric, new, best):
    if best is None:
        return True
    return new < best if LOWER_IS_BETTER[metric] else new > best


def _check_batchnorm_batches(config, ds, dec):
    n_train = len(ds.indices("train"))
    if n_train == 0:
        raise ConfigError("training split is empty")
    if dec.use_batchnorm and n_train % config.batch_size == 1:
        raise ConfigError(
            f"{n_train} training clouds with batch_size {config.batch_size} leave a final batch "
            "of one cloud, which decoder BatchNorm cannot normalise"
        )


def train(config: ExperimentConfig, resume_from=None, dataset=None):
    """Train one model and return its :class:`RunRecord`.

    Writes ``best.ckpt``, ``last.ckpt`` and ``run_record.json`` into
    ``config.output_dir``. ``resume_from`` continues from a ``last.ckpt`` of a
    run with the same configuration up to ``config.epochs``.
    """
    config.validate()
    ds = dataset if dataset is not None else prepare_dataset(config)
    config.validate(dataset_points=ds.n_points)
    enc, dec = config.model_specs()
    _check_batchnorm_batches(config, ds, dec)
    if config.select_split == "test":
        warnings.warn("selecting the best epoch on the test split mirrors the common benchmark "
                      "protocol but leaks test information; use select_split='val' for a "
                      "clean estimate", UserWarning, stacklevel=2)
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    sel_ds = ds.subset(config.select_split)
    test_ds = ds.subset("test")
    threads = config.threads
    metric = config.select_metric

    def run_eval(model, which):
        rep, _ = evaluate_model(model, which, config.emd_mode, config.eval_metrics,
                                config.batch_size, threads)
        return rep.as_dict()

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        rec = ckpt.record
        if rec.get("identity_hash") != config.identity_hash():
            raise ConfigError("checkpoint was written by a run with a different configuration")
        model, opt = ckpt.model, ckpt.optimizer
        start = ckpt.epoch + 1
        state = {k: rec[k] for k in ("train_loss", "eval_metrics", "test_metrics",
                                     "initial_metrics", "best_epoch", "best_metrics")}
    else:
        model = build_model(enc, dec, seed=config.seed)
        opt = Adam(lr=config.learning_rate)
        start = 0
        init = run_eval(model, sel_ds)
        state = {"train_loss": [], "eval_metrics": [], "test_metrics": [],
                 "initial_metrics": init, "best_epoch": None, "best_metrics": None}

    record = RunRecord(config.to_dict(), config.config_hash(), count_parameters(model),
                       select_metric=metric, select_split=config.select_split)
    best_path = os.path.join(out, "best.ckpt")
    last_path = os.path.join(out, "last.ckpt")
    t0 = time.perf_counter()
    n_train = len(ds.indices("train"))

    for epoch in range(start, config.epochs):
        total = 0.0
        for b, batch in enumerate(batches(ds, "train", config.batch_size, config.seed, epoch)):
            model.zero_grad()
            try:
                heads = model.forward(batch, train=True)
                loss, grads = batch_multihead_chamfer_loss(batch.transpose(0, 2, 1), heads)
                if not math.isfinite(loss):
                    raise NonFiniteError("loss is not finite")
                model.backward(grads)
                opt.step(model.named_grads())
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"{exc} (epoch {epoch}, batch {b}, lr {config.learning_rate})"
                ) from exc
            total += loss * batch.shape[0]
        state["train_loss"].append(total / n_train)
        ev = run_eval(model, sel_ds)
        state["eval_metrics"].append(ev)
        state["test_metrics"].append(ev if config.select_split == "test"
                                     else run_eval(model, test_ds))
        improved = _better(metric, ev[metric],
                           None if state["best_metrics"] is None else state["best_metrics"][metric])
        if improved:
            state["best_epoch"] = epoch
            state["best_metrics"] = state["test_metrics"][-1]
        ck_record = dict(state, identity_hash=config.identity_hash(), config=config.identity())
        rng_state = {"kind": "keyed", "seed": config.seed, "next_epoch": epoch + 1}
        if improved:
            save_checkpoint(best_path, model, opt, rng_state, epoch, ck_record)
        save_checkpoint(last_path, model, opt, rng_state, epoch, ck_record)
        log.info("epoch %d loss %.6g %s %.6g", epoch, state["train_loss"][-1], metric, ev[metric])

    for k, v in state.items():
        setattr(record, k, v)
    record.wall_clock = time.perf_counter() - t0
    record.completed = len(record.train_loss) == config.epochs
    record.best_checkpoint = best_path
    record.final_checkpoint = last_path
    record.best_checkpoint_crc = file_crc(best_path) if os.path.exists(best_path) else None
    record.to_json(os.path.join(out, "run_record.json"))
    return record
