# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math
from collections.abc import Sequence
from dataclasses import astuple, dataclass
from enum import Enum
from threading import Lock

from ..logger import logger
from .estimators import GaussianEstimator

__all__ = [
    "Label",
    "CLASSES",
    "FEATURE_NAMES",
    "FeatureVector",
    "HoeffdingTreeConfig",
    "LeafNode",
    "SplitNode",
    "HoeffdingTree",
    "hoeffding_bound",
    "predict_on_time",
    "learn_one",
]


class Label(str, Enum):
    """Outcome of a delivery"""

    DELAY = "delay"
    NO_DELAY = "no_delay"


CLASSES = (Label.DELAY, Label.NO_DELAY)

FEATURE_NAMES = ("remaining_distance", "remaining_time", "avg_speed_5min", "max_speed_5min")


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """
    Features of a (courier, task) pair used for delay prediction.

    Args:
        remaining_distance: float: Meters still to travel to the parcel destination
        remaining_time: float: Seconds until the deadline, negative once it passed
        avg_speed_5min: float: Average speed of the last 5 minutes in m/s
        max_speed_5min: float: Maximal speed of the last 5 minutes in m/s
    """

    remaining_distance: float
    remaining_time: float
    avg_speed_5min: float
    max_speed_5min: float

    def __post_init__(self):
        if self.remaining_distance < 0:
            raise ValueError(f"Negative remaining distance: {self.remaining_distance}")
        if self.avg_speed_5min > self.max_speed_5min:
            raise ValueError(f"Average speed {self.avg_speed_5min} exceeds maximal speed {self.max_speed_5min}")

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


@dataclass(frozen=True)
class HoeffdingTreeConfig:
    """
    Hyper-parameters of the Hoeffding tree.

    Args:
        grace_period: float: Examples a leaf sees between split attempts, `math.inf` disables splitting
        split_confidence: float: Allowed error probability delta of a split decision
        tie_threshold: float: Bound below which a split is forced between near-equal candidates
        n_split_points: int: Evenly spaced candidate thresholds per feature
        min_variance: float: Lower bound of the variance used in Gaussian likelihoods
    """

    grace_period: float = 200
    split_confidence: float = 1e-7
    tie_threshold: float = 0.05
    n_split_points: int = 10
    min_variance: float = 1e-9


def hoeffding_bound(r: float, delta: float, n: int) -> float:
    """
    Radius within which the true mean of a range-`r` statistic lies with probability 1 - `delta` after `n` samples.

    Args:
        r: float: Range of the statistic
        delta: float: Allowed error probability in (0, 1]
        n: int: Number of observations

    Returns:
        float: epsilon = sqrt(r^2 * ln(1 / delta) / (2 * n))
    """
    if n < 1:
        raise ValueError(f"The Hoeffding bound needs at least one observation, got n={n}")
    if not 0 < delta <= 1:
        raise ValueError(f"Confidence delta must be in (0, 1], got {delta}")
    if r <= 0:
        raise ValueError(f"Range must be positive, got {r}")
    return math.sqrt(r * r * math.log(1.0 / delta) / (2.0 * n))


def _entropy(counts: Sequence[float]) -> float:
    total = sum(counts)
    if total <= 0:
        return 0.0
    return -sum((c / total) * math.log2(c / total) for c in counts if c > 0)


@dataclass(frozen=True)
class _SplitSuggestion:
    feature: int
    threshold: float
    merit: float
    left: dict[Label, float]
    right: dict[Label, float]


class LeafNode:
    """
    Leaf holding class counts and per-class Gaussian estimators of every feature.

    Args:
        n_features: int: Number of features
        class_counts: dict[Label, float] | None: Initial class distribution, e.g. inherited from a split
    """

    def __init__(self, n_features: int, class_counts: dict[Label, float] | None = None):
        self.class_counts: dict[Label, float] = {c: 0.0 for c in CLASSES}
        if class_counts:
            self.class_counts.update(class_counts)
        self.estimators = {c: [GaussianEstimator() for _ in range(n_features)] for c in CLASSES}
        self.feature_min = [math.inf] * n_features
        self.feature_max = [-math.inf] * n_features
        self.seen_since_split_attempt = 0

    @property
    def observed(self) -> dict[Label, int]:
        """Examples learned at this leaf per class"""
        return {c: self.estimators[c][0].count for c in CLASSES}

    def learn(self, x: Sequence[float], label: Label) -> None:
        self.class_counts[label] += 1
        for i, value in enumerate(x):
            self.estimators[label][i].update(value)
            self.feature_min[i] = min(self.feature_min[i], value)
            self.feature_max[i] = max(self.feature_max[i], value)
        self.seen_since_split_attempt += 1

    def class_prior(self, label: Label) -> float:
        """Laplace smoothed prior of `label`"""
        total = sum(self.class_counts.values())
        return (self.class_counts[label] + 1.0) / (total + len(CLASSES))

    def predict_proba(self, x: Sequence[float], min_variance: float) -> dict[Label, float]:
        """
        Naive Bayes posterior over the labels.

        A feature only contributes a likelihood once every class has at least two observations of it,
        otherwise its factor is 1 for all classes.

        Args:
            x: Sequence[float]: The feature values
            min_variance: float: Lower bound of the Gaussian variances

        Returns:
            dict[Label, float]: Posterior probability per label
        """
        log_post = {c: math.log(self.class_prior(c)) for c in CLASSES}
        for i, value in enumerate(x):
            if any(self.estimators[c][i].count < 2 for c in CLASSES):
                continue
            for c in CLASSES:
                log_post[c] += self.estimators[c][i].log_pdf(value, min_variance)
        top = max(log_post.values())
        weights = {c: math.exp(v - top) for c, v in log_post.items()}
        norm = sum(weights.values())
        return {c: w / norm for c, w in weights.items()}

    def best_split(self, feature: int, n_points: int) -> _SplitSuggestion | None:
        """
        Best information gain split of `feature` among evenly spaced thresholds.

        Class masses on each side are estimated from the Gaussian estimators.

        Args:
            feature: int: Index of the feature
            n_points: int: Number of candidate thresholds between the observed min and max

        Returns:
            _SplitSuggestion | None: The best suggestion, None if the feature never varied
        """
        lo, hi = self.feature_min[feature], self.feature_max[feature]
        if not lo < hi:
            return None
        observed = self.observed
        pre_entropy = _entropy(list(observed.values()))
        total = sum(observed.values())

        best: _SplitSuggestion | None = None
        for k in range(n_points):
            threshold = lo + (hi - lo) * (k + 1) / (n_points + 1)
            left = {c: observed[c] * self.estimators[c][feature].cdf(threshold) for c in CLASSES}
            right = {c: observed[c] - left[c] for c in CLASSES}
            n_left, n_right = sum(left.values()), sum(right.values())
            post_entropy = (n_left * _entropy(list(left.values())) + n_right * _entropy(list(right.values()))) / total
            merit = pre_entropy - post_entropy
            if best is None or merit > best.merit:
                best = _SplitSuggestion(feature, threshold, merit, left, right)
        return best


class SplitNode:
    """Internal node testing `x[feature] <= threshold`"""

    def __init__(self, feature: int, threshold: float, left: "Node", right: "Node"):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right

    def child_for(self, x: Sequence[float]) -> "Node":
        return self.left if x[self.feature] <= self.threshold else self.right


Node = LeafNode | SplitNode


class HoeffdingTree:
    """
    Incremental Hoeffding tree (VFDT) over numeric features with Naive Bayes leaves.

    One writer learns while readers predict; both go through the same mutex so a prediction
    always sees a consistent tree.

    Args:
        config: HoeffdingTreeConfig | None: Hyper-parameters, defaults mirror common library defaults
        n_features: int: Number of features per example
    """

    def __init__(self, config: HoeffdingTreeConfig | None = None, n_features: int = len(FEATURE_NAMES)):
        self.config = config or HoeffdingTreeConfig()
        self.n_features = n_features
        self.root: Node = LeafNode(n_features)
        self.n_examples = 0
        self.n_splits = 0
        self._mutex = Lock()

    @staticmethod
    def _values(x: FeatureVector | Sequence[float]) -> Sequence[float]:
        return x.as_tuple() if isinstance(x, FeatureVector) else x

    def _route(self, x: Sequence[float]) -> tuple[LeafNode, SplitNode | None]:
        node, parent = self.root, None
        while isinstance(node, SplitNode):
            node, parent = node.child_for(x), node
        return node, parent

    def predict_proba(self, x: FeatureVector | Sequence[float]) -> dict[Label, float]:
        values = self._values(x)
        with self._mutex:
            leaf, _ = self._route(values)
            return leaf.predict_proba(values, self.config.min_variance)

    def predict_on_time(self, x: FeatureVector | Sequence[float]) -> float:
        """Probability sigma that the delivery described by `x` finishes before its deadline"""
        return self.predict_proba(x)[Label.NO_DELAY]

    def predict(self, x: FeatureVector | Sequence[float]) -> Label:
        return Label.NO_DELAY if self.predict_on_time(x) >= 0.5 else Label.DELAY

    def learn_one(self, x: FeatureVector | Sequence[float], label: Label) -> "HoeffdingTree":
        """
        Update the statistics of the leaf `x` falls into and attempt a split after the grace period.

        Args:
            x: FeatureVector | Sequence[float]: The example
            label: Label: Its outcome

        Returns:
            HoeffdingTree: The updated tree
        """
        values = self._values(x)
        with self._mutex:
            leaf, parent = self._route(values)
            leaf.learn(values, Label(label))
            self.n_examples += 1
            if leaf.seen_since_split_attempt >= self.config.grace_period:
                self._attempt_split(leaf, parent)
        return self

    def _attempt_split(self, leaf: LeafNode, parent: SplitNode | None) -> None:
        leaf.seen_since_split_attempt = 0
        observed = leaf.observed
        if sum(1 for n in observed.values() if n > 0) < 2:
            return

        suggestions = [
            s
            for s in (leaf.best_split(f, self.config.n_split_points) for f in range(self.n_features))
            if s is not None
        ]
        if not suggestions:
            return
        suggestions.sort(key=lambda s: s.merit, reverse=True)
        best = suggestions[0]
        # the null split (no split at all) always competes with merit 0
        second_merit = max(suggestions[1].merit if len(suggestions) > 1 else 0.0, 0.0)
        epsilon = hoeffding_bound(1.0, self.config.split_confidence, sum(observed.values()))

        if best.merit <= 0:
            return
        if best.merit - second_merit > epsilon or epsilon < self.config.tie_threshold:
            node = SplitNode(
                best.feature,
                best.threshold,
                LeafNode(self.n_features, best.left),
                LeafNode(self.n_features, best.right),
            )
            if parent is None:
                self.root = node
            elif parent.left is leaf:
                parent.left = node
            else:
                parent.right = node
            self.n_splits += 1
            logger.debug(
                f"Split on {FEATURE_NAMES[best.feature] if self.n_features == len(FEATURE_NAMES) else best.feature}"
                f" <= {best.threshold:.3f} (merit {best.merit:.4f}, epsilon {epsilon:.4f})"
            )

    def _walk(self):
        stack: list[tuple[Node, int]] = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            if isinstance(node, SplitNode):
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))

    def _stats(self) -> tuple[int, int, int]:
        # nodes, leaves, depth; callers hold the mutex
        nodes = leaves = depth = 0
        for node, d in self._walk():
            nodes += 1
            leaves += int(isinstance(node, LeafNode))
            depth = max(depth, d)
        return nodes, leaves, depth

    @property
    def node_count(self) -> int:
        with self._mutex:
            return self._stats()[0]

    @property
    def leaf_count(self) -> int:
        with self._mutex:
            return self._stats()[1]

    @property
    def depth(self) -> int:
        with self._mutex:
            return self._stats()[2]

    def describe(self) -> str:
        """Plain-text model report: statistics followed by the tree structure"""
        names = FEATURE_NAMES if self.n_features == len(FEATURE_NAMES) else [f"x{i}" for i in range(self.n_features)]
        with self._mutex:
            nodes, leaves, depth = self._stats()
            lines = [
                f"nodes: {nodes}",
                f"leaves: {leaves}",
                f"depth: {depth}",
                f"examples seen: {self.n_examples}",
                "",
            ]
            for node, level in self._walk():
                indent = "  " * level
                if isinstance(node, SplitNode):
                    lines.append(f"{indent}if {names[node.feature]} <= {node.threshold:.4f}")
                else:
                    counts = ", ".join(f"{c.value}={node.class_counts[c]:.1f}" for c in CLASSES)
                    lines.append(f"{indent}leaf [{counts}]")
        return "\n".join(lines)


def predict_on_time(tree: HoeffdingTree, fv: FeatureVector) -> float:
    """
    On-time probability sigma of a feature vector.

    Args:
        tree: HoeffdingTree: The delay predictor
        fv: FeatureVector: The (situation, task) features

    Returns:
        float: Probability in [0, 1] that the delivery finishes before its deadline
    """
    return tree.predict_on_time(fv)


def learn_one(tree: HoeffdingTree, fv: FeatureVector, label: Label) -> HoeffdingTree:
    """Train `tree` with one labelled example"""
    return tree.learn_one(fv, label)
