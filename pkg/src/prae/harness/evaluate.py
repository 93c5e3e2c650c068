"""Evaluate a saved checkpoint on a dataset split."""
from __future__ import annotations

from ..checkpoint import load_checkpoint
from ..errors import ConfigError
from .config import METRICS
from .train import evaluate_model


def evaluate_checkpoint(path, dataset, split="all", emd_mode="auto", metrics=METRICS,
                        threads=None, batch_size=32):
    """Mean metrics of the checkpointed model over ``split`` of ``dataset``.

    ``emd_mode="auto"`` solves EMD exactly up to 512 points and with the
    auction above that.
    """
    model = load_checkpoint(path).model
    if dataset.n_points != model.output_points:
        raise ConfigError(
            f"model reconstructs {model.output_points} points but dataset clouds have "
            f"{dataset.n_points}"
        )
    ds = dataset.subset(split) if split != "all" else dataset
    report, _ = evaluate_model(model, ds, emd_mode, metrics, batch_size, threads)
    return report
