"""The mini-batch training loop and the end-of-run evaluation."""
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np

from ._utils import seeded_stream
from .constants import RandomStreams, TrainingDefaults
from .datasets import BatchPlan, Dataset
from .errors import LabelRangeError, NonFiniteError, ShapeError
from .losses import LossConfig, combined_loss, cross_entropy, pair_losses, similarity_from_predictions, split_pairs
from .metrics import LabeledEmbedding, accuracy, angular_compactness, homogeneity_completeness, kmeans_clusters
from .models import Model
from .optim import AdamState, adam_step
from .report import EpochRecord, FinalMetrics, RunReport, append_epoch_csv
from .schedules import ScheduleConfig, schedule_values
from .tensor import Tape, backward, softmax_array

logger = logging.getLogger(__name__)

EpochCallback = Callable[[EpochRecord], None]


def _check_compatible(model: Model, dataset: Dataset) -> None:
    if tuple(dataset.images.shape[1:]) != model.spec.input_shape:
        raise ShapeError(
            f"{dataset.name} images are {dataset.images.shape[1:]}, {model.spec.preset} expects {model.spec.input_shape}"
        )
    if dataset.num_classes > model.spec.num_classes:
        raise LabelRangeError(
            f"{dataset.name} has {dataset.num_classes} classes, the model only {model.spec.num_classes}"
        )


def embed(model: Model, dataset: Dataset, batch_size: int = 256) -> LabeledEmbedding:
    """Eval-mode deep features and predicted labels of a whole split."""
    features, probs = model.predict(dataset.images, batch_size=batch_size)
    return LabeledEmbedding(features, dataset.labels, probs.argmax(axis=1))


def evaluate(model: Model, dataset: Dataset, kmeans: bool = False, seed: int = TrainingDefaults.SEED) -> FinalMetrics:
    """
    Accuracy and clustering quality of a split.

    Homogeneity and completeness are computed with the predicted labels as
    clusters and, if ``kmeans`` is set, also with seeded k-means on the deep
    features (k = number of classes).
    """
    _check_compatible(model, dataset)
    if len(dataset) == 0:
        raise ShapeError(f"{dataset.name}: cannot evaluate an empty split")
    embedding = embed(model, dataset)
    homogeneity, completeness = homogeneity_completeness(embedding.true_labels, embedding.predicted_labels)
    km_h: Optional[float] = None
    km_c: Optional[float] = None
    if kmeans:
        clusters = kmeans_clusters(embedding.features, dataset.num_classes, seed)
        km_h, km_c = homogeneity_completeness(embedding.true_labels, clusters)
    compactness: Optional[float] = None
    separation: Optional[float] = None
    if len(np.unique(embedding.true_labels)) >= 2:
        compactness, separation = angular_compactness(embedding.features, embedding.true_labels)
    return FinalMetrics(
        accuracy=accuracy(embedding.predicted_labels, embedding.true_labels),
        homogeneity=homogeneity,
        completeness=completeness,
        kmeans_homogeneity=km_h,
        kmeans_completeness=km_c,
        compactness=compactness,
        separation=separation,
    )


def train_step(
    model: Model,
    adam: AdamState,
    images: np.ndarray,
    labels: np.ndarray,
    loss_config: LossConfig,
    w: float,
    lr: float,
    beta1: float,
    layer_rng: np.random.Generator,
    pair_rng: np.random.Generator,
) -> float:
    """One forward/backward/Adam update on a mini-batch. Returns the loss."""
    tape = Tape(dtype=model.dtype)
    features, logits = model.forward(tape.constant(images), mode="train", tape=tape, rng=layer_rng)
    loss = cross_entropy(logits, labels)
    if loss_config.uses_pairs:
        halves = split_pairs(np.arange(len(labels)), pair_rng)
        pairs = similarity_from_predictions(softmax_array(logits.numpy()), halves)
        loss = combined_loss(loss, pair_losses(features, pairs, loss_config), w, loss_config.lam, len(labels), loss_config.mode)
    model.zero_grad()
    backward(tape, loss)
    adam_step(model.params, adam, lr, beta1)
    return loss.item()


def fit(
    model: Model,
    train: Dataset,
    test: Dataset,
    loss_config: LossConfig,
    schedule: ScheduleConfig,
    seed: int = TrainingDefaults.SEED,
    batch_size: int = TrainingDefaults.BATCH_SIZE,
    kmeans: bool = False,
    callback: Optional[EpochCallback] = None,
    csv_path: Optional[Union[str, Path]] = None,
    config: Optional[Dict[str, Any]] = None,
) -> RunReport:
    """
    Train ``model`` in place and report every epoch.

    Each epoch ``t`` draws a seeded permutation of the train split and walks
    its full mini-batches. Per batch: a train-mode forward pass, the
    cross-entropy, and for ``eucd``/``amc`` the pair term on the split-half
    pairs whose neighbour indicator comes from the predicted labels, weighted
    by ``w(t) λ / |B|``; then backpropagation and an Adam step with the
    scheduled ``lr(t)`` and ``β1(t)``. Test accuracy is measured after each
    epoch.

    Every random draw derives from ``seed``, so a replay with the same
    arguments reproduces the run exactly.

    Args:
        model: a freshly built (or restored) network.
        train: the normalized train split.
        test: the normalized test split.
        loss_config: objective and its weights.
        schedule: epochs and ramps.
        seed: master seed of the run.
        batch_size: |B|; the last partial batch of an epoch is dropped.
        kmeans: also report k-means homogeneity/completeness at the end.
        callback: called with every finished :class:`EpochRecord`.
        csv_path: per-epoch rows are appended here.
        config: the resolved run configuration stored in the report.

    Raises:
        NonFiniteError: naming the epoch and batch where the loss or a
            gradient became NaN/Inf.
        ShapeError: if a split does not fit the model.
    """
    for split in (train, test):
        _check_compatible(model, split)
    plan = BatchPlan(len(train), batch_size, seed)
    adam = AdamState.create(model.params)
    report = RunReport(config=dict(config) if config else _default_config(loss_config, schedule, batch_size), seed=seed)
    started = time.perf_counter()
    for epoch in range(schedule.total_epochs):
        values = schedule_values(epoch, schedule)
        losses = []
        for step, indices in enumerate(plan.batches(epoch)):
            try:
                loss = train_step(
                    model,
                    adam,
                    train.images[indices],
                    train.labels[indices],
                    loss_config,
                    values.w,
                    values.lr,
                    values.beta1,
                    seeded_stream(seed, RandomStreams.LAYERS, epoch, step),
                    seeded_stream(seed, RandomStreams.PAIRS, epoch, step),
                )
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {step}: {exc}") from exc
            logger.debug("epoch %d batch %d loss %.6f", epoch, step, loss)
            losses.append(loss)
        test_acc = accuracy(embed(model, test).predicted_labels, test.labels)
        record = EpochRecord(epoch, float(np.mean(losses)), values.w, values.lr, values.beta1, test_acc)
        report.epochs.append(record)
        logger.info(
            "epoch %d/%d loss=%.4f w=%.4f lr=%.6f beta1=%.4f test_acc=%.2f",
            epoch + 1,
            schedule.total_epochs,
            record.loss,
            record.w,
            record.lr,
            record.beta1,
            record.test_acc,
        )
        if csv_path is not None:
            append_epoch_csv(record, csv_path)
        if callback is not None:
            callback(record)
    report.final = evaluate(model, test, kmeans=kmeans, seed=seed)
    report.wall_clock = time.perf_counter() - started
    return report


def _default_config(loss_config: LossConfig, schedule: ScheduleConfig, batch_size: int) -> Dict[str, Any]:
    return {
        "loss": loss_config.mode,
        "lam": loss_config.lam,
        "margin_g": loss_config.margin_g,
        "margin_e": loss_config.margin_e,
        "batch_size": batch_size,
        **schedule.to_dict(),
    }
