"""Test the amcloss._trainer module."""
import csv

import numpy as np
import pytest

from amcloss._trainer import embed, evaluate, fit, train_step
from amcloss.datasets import Dataset
from amcloss.errors import LabelRangeError, NonFiniteError, ShapeError
from amcloss.losses import LossConfig
from amcloss.models import build
from amcloss.optim import AdamState
from amcloss.schedules import ScheduleConfig

from . import tiny_dataset, tiny_model

SHORT = ScheduleConfig(total_epochs=3, rampup_len=1, rampdown_len=1, max_lr=0.01)


def _parameters(model):
    return {name: param.value.copy() for name, param in model.parameters.items()}


def _assert_same_parameters(a, b):
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_train_step_updates_parameters(train_split):
    model = tiny_model()
    before = _parameters(model)
    adam = AdamState.create(model.params)
    loss = train_step(
        model,
        adam,
        train_split.images[:16],
        train_split.labels[:16],
        LossConfig(),
        w=1.0,
        lr=0.01,
        beta1=0.9,
        layer_rng=np.random.default_rng(1),
        pair_rng=np.random.default_rng(2),
    )
    assert np.isfinite(loss)
    assert adam.step == 1
    assert not np.array_equal(before["conv1.kernel"], model.parameters["conv1.kernel"].value)


def test_fit_reports_every_epoch(train_split, test_split, tmp_path):
    seen = []
    report = fit(
        tiny_model(),
        train_split,
        test_split,
        LossConfig(),
        SHORT,
        seed=2,
        batch_size=16,
        callback=seen.append,
        csv_path=tmp_path / "epochs.csv",
    )
    assert [record.epoch for record in report.epochs] == [0, 1, 2]
    assert seen == report.epochs
    assert report.config["loss"] == "amc"
    assert report.config["total_epochs"] == 3
    assert report.seed == 2
    assert report.final.accuracy == report.epochs[-1].test_acc
    assert report.final.kmeans_homogeneity is None
    assert report.wall_clock > 0
    with (tmp_path / "epochs.csv").open(newline="") as stream:
        rows = list(csv.reader(stream))
    assert len(rows) == 4
    assert float(rows[1][3]) == report.epochs[0].lr


def test_fit_is_reproducible(train_split, test_split):
    """
    This test ensures that two runs with the same seed produce bitwise
    identical parameters and reports.
    """
    first, second = tiny_model(), tiny_model()
    report_a = fit(first, train_split, test_split, LossConfig(), SHORT, seed=5, batch_size=16)
    report_b = fit(second, train_split, test_split, LossConfig(), SHORT, seed=5, batch_size=16)
    _assert_same_parameters(_parameters(first), _parameters(second))
    assert report_a.epochs == report_b.epochs
    assert report_a.final == report_b.final


def test_zero_lambda_matches_cross_entropy(train_split, test_split):
    ce, amc = tiny_model(), tiny_model()
    fit(ce, train_split, test_split, LossConfig(mode="ce"), SHORT, seed=6, batch_size=16)
    fit(amc, train_split, test_split, LossConfig(lam=0.0, mode="amc"), SHORT, seed=6, batch_size=16)
    _assert_same_parameters(_parameters(ce), _parameters(amc))


def test_pair_term_changes_the_trajectory(train_split, test_split):
    ce, amc = tiny_model(), tiny_model()
    fit(ce, train_split, test_split, LossConfig(mode="ce"), SHORT, seed=6, batch_size=16)
    fit(amc, train_split, test_split, LossConfig(lam=1.0, margin_g=1.5), SHORT, seed=6, batch_size=16)
    assert not np.array_equal(ce.parameters["conv1.kernel"].value, amc.parameters["conv1.kernel"].value)


@pytest.mark.parametrize("mode", ["ce", "eucd", "amc"])
def test_loss_decreases(train_split, test_split, mode):
    schedule = ScheduleConfig(total_epochs=6, rampup_len=0, rampdown_len=0, max_lr=0.01)
    report = fit(tiny_model(seed=3), train_split, test_split, LossConfig(mode=mode), schedule, seed=3, batch_size=16)
    assert report.epochs[-1].loss < report.epochs[0].loss


def test_non_finite_loss_names_epoch_and_batch(train_split, test_split):
    model = tiny_model()
    model.parameters["dense.bias"].value[0] = np.nan
    with pytest.raises(NonFiniteError, match="epoch 0, batch 0"):
        fit(model, train_split, test_split, LossConfig(), SHORT, batch_size=16)


def test_fit_rejects_mismatched_images(train_split, test_split):
    with pytest.raises(ShapeError, match="expects"):
        fit(build("mnist_net"), train_split, test_split, LossConfig(), SHORT, batch_size=16)


def test_evaluate_rejects_too_many_classes(test_split):
    model = tiny_model()
    wide = Dataset(test_split.images, test_split.labels, "test", "cifar100", 20, "unit_range")
    with pytest.raises(LabelRangeError):
        evaluate(model, wide)


def test_evaluate(model, test_split):
    metrics = evaluate(model, test_split, kmeans=True, seed=4)
    embedding = embed(model, test_split)
    assert metrics.accuracy == 100.0 * np.mean(embedding.predicted_labels == test_split.labels)
    assert 0.0 <= metrics.homogeneity <= 1.0
    assert 0.0 <= metrics.kmeans_completeness <= 1.0
    assert metrics == evaluate(model, test_split, kmeans=True, seed=4)
    assert metrics.compactness is not None


@pytest.mark.slow()
def test_learns_synthetic_digits():
    train, test = tiny_dataset(600, seed=20), tiny_dataset(200, seed=21, split="test")
    schedule = ScheduleConfig(total_epochs=8, rampup_len=2, rampdown_len=2, max_lr=0.01)
    report = fit(tiny_model(seed=4, embed_dim=8), train, test, LossConfig(), schedule, seed=4, batch_size=32, kmeans=True)
    assert report.final.accuracy > 50.0
