"""Plain gradient-descent training and deterministic evaluation."""

from __future__ import annotations

import math

import numpy as np

from .model import DraxModel, predict


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def sgd_step(params, learning_rate: float, grad_clip: float = 0.0) -> float:
    """Descend every parameter along its gradient; returns the global norm.

    With a positive `grad_clip`, gradients are rescaled so their global norm
    never exceeds it. Parameters without gradients are left alone.
    """
    norm = global_grad_norm(params)
    scale = learning_rate
    if grad_clip > 0.0 and norm > grad_clip:
        scale *= grad_clip / norm
    for p in params:
        if p.grad is not None:
            p.data -= scale * p.grad
    return norm


def _merge_densities(totals: dict, counts: dict, densities: dict) -> None:
    for site, value in densities.items():
        totals[site] = totals.get(site, 0.0) + value
        counts[site] = counts.get(site, 0) + 1


def train_epoch(model: DraxModel, dataset, epoch: int) -> dict:
    """One pass over the dataset in a seed-and-epoch-determined shuffle order.

    Updates follow each sample (single-sample steps); the reported accuracy
    uses each sample's prediction before its own update. Returns epoch-mean
    loss, accuracy, and the mean mask density per masking site.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    cfg = model.config
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
    masker = model.make_masker()
    params = model.parameters()
    loss_total = 0.0
    hits = 0
    density_totals: dict[str, float] = {}
    density_counts: dict[str, int] = {}
    for idx in order:
        bundle = dataset[int(idx)]
        model.zero_grad()
        loss, probs = model.sample_loss(bundle, masker)
        loss.backward()
        sgd_step(params, cfg.learning_rate, cfg.grad_clip)
        loss_total += loss.item()
        hits += int(predict(probs) == bundle.label)
        _merge_densities(density_totals, density_counts, masker.density_by_site())
    count = len(dataset)
    return {
        "loss": loss_total / count,
        "accuracy": hits / count,
        "mask_density": {
            site: density_totals[site] / density_counts[site]
            for site in sorted(density_totals)
        },
    }


def evaluate(model: DraxModel, dataset) -> dict:
    """Accuracy and per-sample predictions, in dataset order."""
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    masker = model.make_masker()
    records = []
    hits = 0
    loss_total = 0.0
    for index, bundle in enumerate(dataset):
        loss, probs = model.sample_loss(bundle, masker)
        guess = predict(probs)
        hits += int(guess == bundle.label)
        loss_total += loss.item()
        records.append(
            {
                "index": index,
                "label": int(bundle.label),
                "prediction": guess,
                "correct": bool(guess == bundle.label),
                "probabilities": [float(v) for v in probs],
            }
        )
    return {
        "accuracy": hits / len(dataset),
        "loss": loss_total / len(dataset),
        "samples": records,
    }


def fit(model: DraxModel, dataset, epochs: int | None = None, target_accuracy: float = 1.0,
        on_epoch=None) -> list[dict]:
    """Train for up to `epochs`, stopping early at `target_accuracy`.

    `on_epoch` receives (epoch, metrics) after every epoch, for logging.
    """
    history = []
    total = model.config.epochs if epochs is None else epochs
    for epoch in range(1, total + 1):
        metrics = train_epoch(model, dataset, epoch)
        metrics["epoch"] = epoch
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(epoch, metrics)
        if metrics["accuracy"] >= target_accuracy:
            break
    return history
