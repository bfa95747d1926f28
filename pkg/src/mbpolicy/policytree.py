"""Fixed-depth axis-aligned decision-tree policies and exact advantage search.

A policy is a complete binary tree of depth 1 or 2 stored in heap order:
node 0 is the root, node i's children are 2i+1 and 2i+2, and the 2^depth
leaves carry actions in {0, 1}. Evaluation goes left iff x_feature <= threshold.

The search maximizes sum_i (2 pi(x_i) - 1) gamma_i over every tree whose
thresholds come from the per-feature candidate set (midpoints of consecutive
sorted distinct values plus -inf/+inf sentinels). It is exact: the depth-2
problem decomposes into a root scan times two independent depth-1 subproblems,
each solved with prefix sums of gamma over a presorted order. Ties are broken
by a fixed scan order (feature ascending, threshold ascending, left subtree
before right), and a leaf takes action 1 iff its gamma sum is strictly
positive, so results are fully deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .dataset import ObservationalDataset
from .matching import ImputedPotentialOutcomes, impute_bias_corrected, impute_raw, match_units
from .metric import fit_mahalanobis
from .outcome_models import fit_lasso_per_arm, fit_ols_per_arm

__all__ = [
    "TreePolicy",
    "LearnConfig",
    "PolicyLearningError",
    "constant_policy",
    "evaluate_policy",
    "search_tree",
    "impute_scores",
    "learn_policy",
]

MAX_DEPTH = 2
CORRECTIONS = ("none", "ols", "lasso")


@dataclass(frozen=True, eq=False)
class TreePolicy:
    """Complete binary decision tree assigning a binary action per unit.

    features/thresholds have one entry per internal node (heap order),
    leaf_actions one entry per leaf (left to right). eligible_features lists
    the feature indices the tree was allowed to split on; feature_names, when
    present, names the full feature vector for display.
    """

    depth: int
    features: np.ndarray
    thresholds: np.ndarray
    leaf_actions: np.ndarray
    eligible_features: tuple[int, ...]
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.depth not in range(1, MAX_DEPTH + 1):
            raise ValueError(f"depth must be in 1..{MAX_DEPTH}, got {self.depth}")
        n_internal = 2**self.depth - 1
        features = np.ascontiguousarray(np.asarray(self.features, dtype=np.int64))
        thresholds = np.ascontiguousarray(np.asarray(self.thresholds, dtype=float))
        leaves = np.ascontiguousarray(np.asarray(self.leaf_actions, dtype=np.int64))
        if features.shape != (n_internal,) or thresholds.shape != (n_internal,):
            raise ValueError(f"expected {n_internal} internal nodes for depth {self.depth}")
        if leaves.shape != (n_internal + 1,):
            raise ValueError(f"expected {n_internal + 1} leaves for depth {self.depth}")
        if np.any(np.isnan(thresholds)):
            raise ValueError("thresholds must not be NaN")
        if not np.all(np.isin(leaves, (0, 1))):
            raise ValueError("leaf actions must be 0 or 1")
        eligible = tuple(sorted({int(f) for f in self.eligible_features}))
        if not eligible:
            raise ValueError("eligible_features must be nonempty")
        if eligible[0] < 0:
            raise ValueError("feature indices must be nonnegative")
        if not set(features.tolist()) <= set(eligible):
            raise ValueError("every split feature must be in eligible_features")
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) <= max(eligible):
                raise ValueError("feature_names too short for eligible_features")
        for arr in (features, thresholds, leaves):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "leaf_actions", leaves)
        object.__setattr__(self, "eligible_features", eligible)
        object.__setattr__(self, "feature_names", names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreePolicy):
            return NotImplemented
        return (
            self.depth == other.depth
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.thresholds, other.thresholds)
            and np.array_equal(self.leaf_actions, other.leaf_actions)
            and self.eligible_features == other.eligible_features
            and self.feature_names == other.feature_names
        )

    def _label(self, feature: int) -> str:
        if self.feature_names is None:
            return f"x[{feature}]"
        return f"x[{feature}] ({self.feature_names[feature]})"

    def to_text(self) -> str:
        """Nested human-readable form; parses back exactly via from_text."""
        lines = [f"policy depth={self.depth}"]
        lines.append("eligible: " + ", ".join(str(f) for f in self.eligible_features))
        if self.feature_names is not None:
            lines.append("names: " + json.dumps(list(self.feature_names)))

        def emit(node: int, level: int, indent: str) -> None:
            if level == self.depth:
                leaf = node - (2**self.depth - 1)
                lines.append(f"{indent}action {int(self.leaf_actions[leaf])}")
                return
            feature = int(self.features[node])
            threshold = repr(float(self.thresholds[node]))
            lines.append(f"{indent}if {self._label(feature)} <= {threshold}:")
            emit(2 * node + 1, level + 1, indent + "  ")
            lines.append(f"{indent}else:")
            emit(2 * node + 2, level + 1, indent + "  ")

        emit(0, 0, "")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TreePolicy":
        lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
        header = re.fullmatch(r"policy depth=(\d+)", lines[0])
        if header is None:
            raise ValueError("first line must be 'policy depth=D'")
        depth = int(header.group(1))
        if not lines[1].startswith("eligible: "):
            raise ValueError("second line must list eligible feature indices")
        eligible = tuple(int(t) for t in lines[1][len("eligible: "):].split(", "))
        pos = 2
        names = None
        if pos < len(lines) and lines[pos].startswith("names: "):
            names = tuple(json.loads(lines[pos][len("names: "):]))
            pos += 1

        n_internal = 2**depth - 1
        features = np.zeros(n_internal, dtype=np.int64)
        thresholds = np.zeros(n_internal, dtype=float)
        leaves = np.zeros(n_internal + 1, dtype=np.int64)
        split_re = re.compile(r"if x\[(\d+)\](?: \(.*\))? <= (.+):")
        leaf_re = re.compile(r"action ([01])")

        def parse(node: int, level: int, cursor: int) -> int:
            line = lines[cursor].strip()
            if level == depth:
                matched = leaf_re.fullmatch(line)
                if matched is None:
                    raise ValueError(f"expected leaf action, got {line!r}")
                leaves[node - n_internal] = int(matched.group(1))
                return cursor + 1
            matched = split_re.fullmatch(line)
            if matched is None:
                raise ValueError(f"expected split, got {line!r}")
            features[node] = int(matched.group(1))
            thresholds[node] = float(matched.group(2))
            cursor = parse(2 * node + 1, level + 1, cursor + 1)
            if lines[cursor].strip() != "else:":
                raise ValueError(f"expected 'else:', got {lines[cursor]!r}")
            return parse(2 * node + 2, level + 1, cursor + 1)

        end = parse(0, 0, pos)
        if end != len(lines):
            raise ValueError("trailing content after policy body")
        return cls(
            depth=depth,
            features=features,
            thresholds=thresholds,
            leaf_actions=leaves,
            eligible_features=eligible,
            feature_names=names,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "depth": self.depth,
                "features": self.features.tolist(),
                "thresholds": self.thresholds.tolist(),
                "leaf_actions": self.leaf_actions.tolist(),
                "eligible_features": list(self.eligible_features),
                "feature_names": (
                    list(self.feature_names) if self.feature_names is not None else None
                ),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TreePolicy":
        payload = json.loads(text)
        names = payload.get("feature_names")
        return cls(
            depth=int(payload["depth"]),
            features=np.array(payload["features"], dtype=np.int64),
            thresholds=np.array(payload["thresholds"], dtype=float),
            leaf_actions=np.array(payload["leaf_actions"], dtype=np.int64),
            eligible_features=tuple(payload["eligible_features"]),
            feature_names=tuple(names) if names is not None else None,
        )


def constant_policy(
    action: int, feature_names: tuple[str, ...] | None = None
) -> TreePolicy:
    """Degenerate stump assigning the same action everywhere (treat-all/none)."""
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action}")
    return TreePolicy(
        depth=1,
        features=np.array([0]),
        thresholds=np.array([np.inf]),
        leaf_actions=np.array([action, action]),
        eligible_features=(0,),
        feature_names=feature_names,
    )


def evaluate_policy(tree: TreePolicy, x: np.ndarray) -> np.ndarray:
    """Assignment per row by root-to-leaf descent (left iff value <= threshold)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if int(tree.features.max()) >= x.shape[1]:
        raise ValueError(
            f"tree splits on feature {int(tree.features.max())} "
            f"but x has only {x.shape[1]} columns"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for _ in range(tree.depth):
        go_right = x[rows, tree.features[node]] > tree.thresholds[node]
        node = 2 * node + 1 + go_right
    return tree.leaf_actions[node - (2**tree.depth - 1)].astype(np.int64)


def _split_candidates(values: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive sorted distinct values, plus -inf/+inf."""
    distinct = np.unique(values)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


class _Stump:
    """Best depth-1 split over a unit subset: objective plus reconstruction info."""

    __slots__ = ("objective", "feature", "threshold", "left_action", "right_action")

    def __init__(self, objective, feature, threshold, left_sum, total):
        self.objective = objective
        self.feature = feature
        self.threshold = threshold
        self.left_action = 1 if left_sum > 0 else 0
        self.right_action = 1 if total - left_sum > 0 else 0


def _best_stump(per_feature: list, mask: np.ndarray | None) -> _Stump:
    """Exact depth-1 solve over the masked units, scanning candidates in order.

    per_feature rows are (feature, sort order, sorted values, gamma in sorted
    order, candidate thresholds). The first maximizer in (feature, threshold)
    order wins; leaf actions are 1 iff the leaf gamma sum is positive.
    """
    best = None
    for feature, order, xs, g_ord, cands in per_feature:
        if mask is not None:
            keep = mask[order]  # preserves sorted order, no re-sort needed
            xs = xs[keep]
            g_ord = g_ord[keep]
        prefix = np.concatenate(([0.0], np.cumsum(g_ord)))
        left = prefix[np.searchsorted(xs, cands, side="right")]
        total = prefix[-1]
        objective = np.abs(left) + np.abs(total - left)
        j = int(np.argmax(objective))
        if best is None or objective[j] > best.objective:
            best = _Stump(float(objective[j]), feature, float(cands[j]), left[j], total)
    return best


def search_tree(
    x: np.ndarray,
    gamma: np.ndarray,
    depth: int,
    eligible_features: tuple[int, ...] | None = None,
) -> TreePolicy:
    """Exact maximizer of sum_i (2 pi(x_i) - 1) gamma_i over the tree class.

    Candidate thresholds per feature are midpoints of consecutive sorted
    distinct observed values plus -inf/+inf. Among equal-objective trees the
    first in scan order (feature ascending, threshold ascending, left subtree
    before right) is returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    n, p = x.shape
    if n < 1:
        raise ValueError("need at least one row")
    if gamma.shape != (n,):
        raise ValueError(f"gamma has shape {gamma.shape}, expected ({n},)")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(gamma))):
        raise ValueError("x and gamma must be finite")
    if depth not in range(1, MAX_DEPTH + 1):
        raise ValueError(f"depth must be in 1..{MAX_DEPTH}, got {depth}")
    if eligible_features is None:
        eligible = tuple(range(p))
    else:
        eligible = tuple(sorted({int(f) for f in eligible_features}))
    if not eligible:
        raise ValueError("eligible_features must be nonempty")
    if eligible[0] < 0 or eligible[-1] >= p:
        raise ValueError(f"eligible feature indices must lie in [0, {p})")

    per_feature = []
    for feature in eligible:
        order = np.argsort(x[:, feature], kind="stable")
        xs = x[order, feature]
        per_feature.append((feature, order, xs, gamma[order], _split_candidates(xs)))

    if depth == 1:
        stump = _best_stump(per_feature, mask=None)
        return TreePolicy(
            depth=1,
            features=np.array([stump.feature]),
            thresholds=np.array([stump.threshold]),
            leaf_actions=np.array([stump.left_action, stump.right_action]),
            eligible_features=eligible,
        )

    best_objective = -np.inf
    best = None
    for feature, _, _, _, cands in per_feature:
        column = x[:, feature]
        for threshold in cands:
            mask = column <= threshold
            left = _best_stump(per_feature, mask)
            right = _best_stump(per_feature, ~mask)
            objective = left.objective + right.objective
            if objective > best_objective:
                best_objective = objective
                best = (feature, float(threshold), left, right)

    feature, threshold, left, right = best
    return TreePolicy(
        depth=2,
        features=np.array([feature, left.feature, right.feature]),
        thresholds=np.array([threshold, left.threshold, right.threshold]),
        leaf_actions=np.array(
            [left.left_action, left.right_action, right.left_action, right.right_action]
        ),
        eligible_features=eligible,
    )


@dataclass(frozen=True)
class LearnConfig:
    """Settings for the impute-then-search pipeline.

    m: matches per unit. correction: counterfactual adjustment, one of
    "none", "ols" (linear fit per arm), "lasso" (quadratic-expansion lasso
    per arm, penalty by cross-validation). seed drives only the lasso CV
    fold shuffles. eligible_features None means all dataset-eligible features.
    """

    m: int = 5
    correction: str = "lasso"
    depth: int = 2
    eligible_features: tuple[int, ...] | None = None
    lasso_folds: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.correction not in CORRECTIONS:
            raise ValueError(
                f"correction must be one of {CORRECTIONS}, got {self.correction!r}"
            )
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.depth not in range(1, MAX_DEPTH + 1):
            raise ValueError(f"depth must be in 1..{MAX_DEPTH}, got {self.depth}")


class PolicyLearningError(RuntimeError):
    """Failure inside one stage of learn_policy, labeled with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def _run_stage(stage, fn):
    try:
        return fn()
    except Exception as exc:
        raise PolicyLearningError(stage, exc) from exc


def impute_scores(
    data: ObservationalDataset, config: LearnConfig
) -> ImputedPotentialOutcomes:
    """Imputation stages of the pipeline: metric, matching, optional correction."""
    metric = _run_stage("metric", lambda: fit_mahalanobis(data.x))
    matches = _run_stage("matching", lambda: match_units(data, metric, config.m))
    if config.correction == "none":
        return _run_stage("imputation", lambda: impute_raw(data, matches))
    if config.correction == "ols":
        model = _run_stage("outcome_model", lambda: fit_ols_per_arm(data, "linear"))
    else:
        model = _run_stage(
            "outcome_model",
            lambda: fit_lasso_per_arm(data, folds=config.lasso_folds, seed=config.seed),
        )
    return _run_stage("imputation", lambda: impute_bias_corrected(data, matches, model))


def learn_policy(
    data: ObservationalDataset,
    config: LearnConfig,
    imputed: ImputedPotentialOutcomes | None = None,
) -> TreePolicy:
    """Full pipeline: metric, matching, optional outcome model, imputation, search.

    Deterministic given (data, config); the only randomness is the seeded
    lasso cross-validation shuffle. Pass a precomputed imputation to reuse it
    (e.g. when the per-unit scores are also being reported).
    """
    eligible = (
        data.eligible_feature_indices()
        if config.eligible_features is None
        else tuple(sorted({int(f) for f in config.eligible_features}))
    )
    if imputed is None:
        imputed = impute_scores(data, config)
    tree = _run_stage(
        "search",
        lambda: search_tree(data.x, imputed.gamma, config.depth, eligible),
    )
    return TreePolicy(
        depth=tree.depth,
        features=tree.features,
        thresholds=tree.thresholds,
        leaf_actions=tree.leaf_actions,
        eligible_features=tree.eligible_features,
        feature_names=data.feature_names,
    )
