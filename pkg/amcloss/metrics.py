"""
Accuracy, clustering quality of deep features and the significance test used
to compare repeated runs.
"""
import csv
import io
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans
from sklearn.metrics import homogeneity_completeness_v_measure

from ._utils import seeded_stream
from .constants import Numerics, RandomStreams
from .errors import ConfigError, ShapeError
from .report import RunReport


@dataclass(frozen=True)
class LabeledEmbedding:
    """Deep features of a split with the true and the predicted class of each row."""

    features: np.ndarray
    true_labels: np.ndarray
    predicted_labels: np.ndarray

    def __post_init__(self) -> None:
        if not len(self.features) == len(self.true_labels) == len(self.predicted_labels):
            raise ShapeError("LabeledEmbedding: features and labels must have the same length")


@dataclass(frozen=True)
class RunSample:
    """Final accuracies (percent) of repeated runs, one per seed."""

    values: Tuple[float, ...]

    @classmethod
    def of(cls, values: Iterable[float]) -> "RunSample":
        return cls(tuple(float(v) for v in values))

    def __len__(self) -> int:
        return len(self.values)


def accuracy(predicted: Sequence[int], true: Sequence[int]) -> float:
    """
    Percentage of matching labels.

    Raises:
        ShapeError: for empty or unequal inputs.
    """
    p, t = np.asarray(predicted), np.asarray(true)
    if p.shape != t.shape or p.size == 0:
        raise ShapeError(f"accuracy: need two non-empty label arrays of equal length, got {p.shape} and {t.shape}")
    return 100.0 * int((p == t).sum()) / p.size


def homogeneity_completeness(class_labels: Sequence[int], cluster_labels: Sequence[int]) -> Tuple[float, float]:
    """
    Homogeneity and completeness of a clustering with respect to classes.

    ``h = 1 - H(class|cluster) / H(class)`` and
    ``c = 1 - H(cluster|class) / H(cluster)``, both computed as the mutual
    information over the respective entropy, with natural logarithms. A zero
    reference entropy gives 1.

    Raises:
        ShapeError: for empty or unequal inputs.
    """
    classes, clusters = np.asarray(class_labels), np.asarray(cluster_labels)
    if classes.shape != clusters.shape or classes.size == 0:
        raise ShapeError("homogeneity_completeness: need two non-empty label arrays of equal length")
    homogeneity, completeness, _ = homogeneity_completeness_v_measure(classes, clusters)
    return float(homogeneity), float(completeness)


def two_sided_t_test(
    mean_a: float, sd_a: float, n_a: int, mean_b: float, sd_b: float, n_b: int
) -> float:
    """
    p-value of the pooled-variance two-sample Student t-test.

    The area of the t distribution with ``n_a + n_b - 2`` degrees of freedom
    outside ``±t``. With zero pooled variance the result is 1 for equal
    means and 0 otherwise.

    Raises:
        ConfigError: if a sample has fewer than 2 runs or a negative sd.
    """
    if n_a < 2 or n_b < 2:
        raise ConfigError(f"runs: the t-test needs at least 2 runs per sample, got {n_a} and {n_b}")
    if sd_a < 0 or sd_b < 0:
        raise ConfigError("sd: standard deviations must be non-negative")
    if sd_a == 0 and sd_b == 0:
        return 1.0 if mean_a == mean_b else 0.0
    result = stats.ttest_ind_from_stats(mean_a, sd_a, n_a, mean_b, sd_b, n_b, equal_var=True)
    return float(result.pvalue)


def run_summary(sample: Union[RunSample, Sequence[float]]) -> Tuple[float, float]:
    """Mean and sample (n - 1) standard deviation of at least two runs."""
    values = np.asarray(sample.values if isinstance(sample, RunSample) else sample, dtype=np.float64)
    if values.size < 2:
        raise ConfigError(f"runs: a summary needs at least 2 runs, got {values.size}")
    return float(values.mean()), float(values.std(ddof=1))


def compare_runs(sample_a: RunSample, sample_b: RunSample) -> float:
    """:func:`two_sided_t_test` on the summaries of two sets of runs."""
    mean_a, sd_a = run_summary(sample_a)
    mean_b, sd_b = run_summary(sample_b)
    return two_sided_t_test(mean_a, sd_a, len(sample_a), mean_b, sd_b, len(sample_b))


def kmeans_clusters(features: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Seeded k-means cluster ids of the rows of ``features``."""
    if k < 1 or k > len(features):
        raise ConfigError(f"k: need 1 <= k <= {len(features)}, got {k}")
    random_state = int(seeded_stream(seed, RandomStreams.KMEANS).integers(2**31 - 1))
    return KMeans(n_clusters=k, n_init=10, random_state=random_state).fit_predict(features)


class AngularStats(NamedTuple):
    compactness: float
    separation: float


def angular_compactness(features: np.ndarray, labels: Sequence[int]) -> AngularStats:
    """
    Angular spread of unit features around their class directions.

    ``compactness`` is the mean geodesic distance of each unit feature to the
    normalized mean of its class; ``separation`` is the smallest geodesic
    distance between two class directions. Both in radians.

    Raises:
        ConfigError: if fewer than two classes are present.
    """
    x = np.asarray(features, dtype=np.float64)
    z = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), Numerics.MIN_FEATURE_NORM)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ConfigError("labels: angular statistics need at least two classes")
    centers = np.stack([z[y == c].mean(axis=0) for c in classes])
    centers /= np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), Numerics.MIN_FEATURE_NORM)
    limit = 1.0 - Numerics.ARCCOS_CLAMP
    own = centers[np.searchsorted(classes, y)]
    spread = np.arccos(np.clip((z * own).sum(axis=1), -limit, limit))
    between = np.arccos(np.clip(centers @ centers.T, -limit, limit))
    upper = between[np.triu_indices(len(classes), k=1)]
    return AngularStats(float(spread.mean()), float(upper.min()))


@dataclass(frozen=True)
class SummaryRow:
    group: str
    runs: int
    mean: float
    sd: float
    p_value: Optional[float]


SUMMARY_FIELDS = ("group", "runs", "mean", "sd", "p_value")


def summarize_reports(
    reports: Sequence[RunReport], group_by: str = "loss", baseline: Optional[str] = None
) -> List[SummaryRow]:
    """
    Mean, sd and p-value against a baseline group of the final accuracies.

    Args:
        reports: finished runs.
        group_by: the config field that defines a group.
        baseline: the group the others are tested against; no p-values
            without one.

    Raises:
        ConfigError: if a report has no final metrics, lacks the group field,
            or the baseline group does not exist.
    """
    groups: Dict[str, List[float]] = {}
    for report in reports:
        if report.final is None:
            raise ConfigError("report: run has no final metrics")
        if group_by not in report.config:
            raise ConfigError(f"group-by: field {group_by!r} missing from a run config")
        groups.setdefault(str(report.config[group_by]), []).append(report.final.accuracy)
    if baseline is not None and baseline not in groups:
        raise ConfigError(f"baseline: no runs with {group_by}={baseline!r}")
    rows = []
    for name, values in groups.items():
        mean, sd = run_summary(values) if len(values) >= 2 else (values[0], float("nan"))
        p_value = None
        if baseline is not None and name != baseline and len(values) >= 2 and len(groups[baseline]) >= 2:
            p_value = compare_runs(RunSample.of(groups[baseline]), RunSample.of(values))
        rows.append(SummaryRow(name, len(values), mean, sd, p_value))
    return rows


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for row in rows:
        p_value = "" if row.p_value is None else f"{row.p_value:.4f}"
        writer.writerow([row.group, row.runs, f"{row.mean:.4f}", f"{row.sd:.4f}", p_value])
    return buffer.getvalue()
