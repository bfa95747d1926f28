"""Synthetic data-generating processes with ground-truth oracles.

Covariates are N(0, I_4). Treatment is Bernoulli with logit l(X) drawn from
five propensity scenarios (linear/nonlinear/constant, balanced through
extremely imbalanced). Outcomes are Y = m(X) + W c(X) + e with a linear or
nonlinear main effect, a tree or non-tree +-1 contrast, and a single N(0,1)
noise draw shared by both potential outcomes, so Y(1) - Y(0) = c(X) exactly.

All randomness flows through the Philox counter-based generator with the
ziggurat normal transform, keyed directly (no seed spreading), and the draw
order inside generate() is fixed: covariate matrix, then treatment uniforms,
then outcome noise. Identical specs therefore reproduce bit-identical data.

run_experiment pairs methods on common random numbers: the per-replicate
dataset and test-set seeds are derived from the setting and replicate index
only, never from the method name.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .advantage import aipw_scores
from .dataset import ObservationalDataset
from .evaluation import fit_linear_probability
from .outcome_models import fit_ols_per_arm, predict_matrix
from .policytree import LearnConfig, TreePolicy, evaluate_policy, learn_policy, search_tree
from .seeding import derive_seed, philox_rng

__all__ = [
    "SimulationSpec",
    "SimulationOracle",
    "MonteCarloEstimate",
    "ReplicateResult",
    "METHODS",
    "derive_seed",
    "generate",
    "empirical_value",
    "true_advantage",
    "learn_with_method",
    "run_experiment",
    "write_results_csv",
    "write_summary_csv",
    "write_timings_csv",
]

N_FEATURES = 4
FEATURE_NAMES = ("x1", "x2", "x3", "x4")
MAIN_EFFECTS = ("linear", "nonlinear")
CONTRASTS = ("tree", "nontree")
DEFAULT_TEST_N = 20_000

# Learner registry: matching with m in {1,5}, optionally bias-corrected by a
# per-arm linear fit (lr) or a quadratic-expansion lasso, plus a doubly robust
# scored tree baseline for comparisons.
METHODS: dict[str, LearnConfig | None] = {
    "mb-m1": LearnConfig(m=1, correction="none"),
    "mb-m5": LearnConfig(m=5, correction="none"),
    "mb-lr-m1": LearnConfig(m=1, correction="ols"),
    "mb-lr-m5": LearnConfig(m=5, correction="ols"),
    "mb-lasso-m1": LearnConfig(m=1, correction="lasso"),
    "mb-lasso-m5": LearnConfig(m=5, correction="lasso"),
    "aipw-tree": None,
}


def _logistic(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _propensity_logit(x: np.ndarray, scenario: int) -> np.ndarray:
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    if scenario == 1:
        return -x1 + 0.5 * x2 - 0.25 * x3 - 0.1 * x4
    if scenario == 2:
        return 0.1 * x1**3 + 0.2 * x2**3 + 0.3 * x3
    if scenario == 3:
        return 2.1 - x1 + 2.0 * x2 - 0.25 * x3 - 0.1 * x4
    if scenario == 4:
        return np.full(x.shape[0], np.log(9.0))
    if scenario == 5:
        return 1.0 + np.exp(x2) + np.sin(x1) * np.cos(x3)
    raise ValueError(f"propensity scenario must be 1..5, got {scenario}")


def _main_effect(x: np.ndarray, kind: str) -> np.ndarray:
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    if kind == "linear":
        return 1.0 + 2.0 * x1 - x2 + 0.5 * x3 - 1.5 * x4
    if kind == "nonlinear":
        return 4.0 * np.sin(x1) + 2.5 * np.cos(x2) - x3 * x4
    raise ValueError(f"main_effect must be one of {MAIN_EFFECTS}, got {kind!r}")


def _contrast(x: np.ndarray, kind: str) -> np.ndarray:
    x1, x2 = x[:, 0], x[:, 1]
    if kind == "tree":
        return 2.0 * ((x1 > 0) & (x2 > 0)) - 1.0
    if kind == "nontree":
        return 2.0 * (2.0 * x2 - np.exp(1.0 + x1) + 2.0 > 0) - 1.0
    raise ValueError(f"contrast must be one of {CONTRASTS}, got {kind!r}")


@dataclass(frozen=True)
class SimulationSpec:
    """One data-generating configuration: propensity scenario, outcome model, size, seed."""

    propensity_scenario: int
    main_effect: str
    contrast: str
    n: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.propensity_scenario not in range(1, 6):
            raise ValueError(
                f"propensity_scenario must be 1..5, got {self.propensity_scenario}"
            )
        if self.main_effect not in MAIN_EFFECTS:
            raise ValueError(f"main_effect must be one of {MAIN_EFFECTS}")
        if self.contrast not in CONTRASTS:
            raise ValueError(f"contrast must be one of {CONTRASTS}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def key(self) -> str:
        """Canonical text form used in seed derivation and result tables."""
        return (
            f"s{self.propensity_scenario}-{self.main_effect}-{self.contrast}-n{self.n}"
        )


@dataclass(frozen=True)
class SimulationOracle:
    """Ground truth for one generated dataset.

    Callables give the true mean function mu(x, w) = m(x) + w c(x), the
    propensity e(x), and the contrast c(x) at arbitrary points; y0/y1 are the
    generated potential-outcome pairs for the dataset rows (shared noise, so
    y1 - y0 equals the contrast exactly). optimal_rule is I{c(x) > 0}.
    """

    mu: Callable[[np.ndarray, int], np.ndarray]
    propensity: Callable[[np.ndarray], np.ndarray]
    contrast: Callable[[np.ndarray], np.ndarray]
    y0: np.ndarray
    y1: np.ndarray

    def __post_init__(self) -> None:
        y0 = np.ascontiguousarray(np.asarray(self.y0, dtype=float))
        y1 = np.ascontiguousarray(np.asarray(self.y1, dtype=float))
        if y0.shape != y1.shape or y0.ndim != 1:
            raise ValueError("y0 and y1 must be equal-length vectors")
        y0.setflags(write=False)
        y1.setflags(write=False)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)

    def optimal_rule(self, x: np.ndarray) -> np.ndarray:
        return (self.contrast(np.atleast_2d(np.asarray(x, dtype=float))) > 0).astype(
            np.int64
        )


def generate(spec: SimulationSpec) -> tuple[ObservationalDataset, SimulationOracle]:
    """Draw one dataset plus its oracle; identical specs give bit-identical output."""
    rng = philox_rng(spec.seed)
    x = rng.standard_normal((spec.n, N_FEATURES))
    e = _logistic(_propensity_logit(x, spec.propensity_scenario))
    w = (rng.random(spec.n) < e).astype(np.int64)
    noise = rng.standard_normal(spec.n)

    m = _main_effect(x, spec.main_effect)
    c = _contrast(x, spec.contrast)
    y0 = m + noise
    y1 = y0 + c  # shared noise: the potential-outcome gap is the contrast
    y = np.where(w == 1, y1, y0)

    scenario, main_kind, contrast_kind = (
        spec.propensity_scenario,
        spec.main_effect,
        spec.contrast,
    )

    def mu(points: np.ndarray, arm: int) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _main_effect(points, main_kind) + arm * _contrast(points, contrast_kind)

    def propensity(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _logistic(_propensity_logit(points, scenario))

    def contrast(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _contrast(points, contrast_kind)

    data = ObservationalDataset(x=x, w=w, y=y, feature_names=FEATURE_NAMES)
    oracle = SimulationOracle(mu=mu, propensity=propensity, contrast=contrast, y0=y0, y1=y1)
    return data, oracle


def empirical_value(assignments: np.ndarray, oracle: SimulationOracle) -> float:
    """Mean realized outcome had each unit received its assigned arm."""
    assignments = np.asarray(assignments)
    if assignments.shape != oracle.y0.shape:
        raise ValueError(
            f"assignments has shape {assignments.shape}, expected {oracle.y0.shape}"
        )
    return float(np.mean(np.where(assignments == 1, oracle.y1, oracle.y0)))


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    standard_error: float


def true_advantage(
    policy: TreePolicy, spec: SimulationSpec, mc_draws: int, seed: int
) -> MonteCarloEstimate:
    """Monte Carlo estimate of E[(2 pi(X) - 1) c(X)] over fresh covariate draws."""
    if mc_draws < 2:
        raise ValueError(f"mc_draws must be >= 2 for a standard error, got {mc_draws}")
    rng = philox_rng(seed)
    x = rng.standard_normal((mc_draws, N_FEATURES))
    signs = 2.0 * evaluate_policy(policy, x) - 1.0
    vals = signs * _contrast(x, spec.contrast)
    return MonteCarloEstimate(
        value=float(vals.mean()),
        standard_error=float(vals.std(ddof=1) / np.sqrt(mc_draws)),
    )


def learn_with_method(
    data: ObservationalDataset, method: str, seed: int, depth: int = 2
) -> TreePolicy:
    """Train one registry method on a dataset.

    The matching methods run the impute-then-search pipeline; aipw-tree scores
    units with the doubly robust formula built from this package's plug-in
    nuisances (linear-probability propensity, quadratic OLS outcome model) and
    searches the same tree class on those scores.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    if method == "aipw-tree":
        e_hat = fit_linear_probability(data)
        model = fit_ols_per_arm(data, "quadratic")
        scores = aipw_scores(data, e_hat, lambda pts, arm: predict_matrix(model, pts, arm))
        tree = search_tree(data.x, scores.gamma, depth, data.eligible_feature_indices())
        return TreePolicy(
            depth=tree.depth,
            features=tree.features,
            thresholds=tree.thresholds,
            leaf_actions=tree.leaf_actions,
            eligible_features=tree.eligible_features,
            feature_names=data.feature_names,
        )
    config = replace(METHODS[method], depth=depth, seed=seed)
    return learn_policy(data, config)


@dataclass(frozen=True)
class ReplicateResult:
    """One (setting, method, replicate) outcome row.

    value and regret are NaN when error is nonempty; tree is kept in memory
    for diagnostics and excluded from CSV output.
    """

    propensity_scenario: int
    main_effect: str
    contrast: str
    n: int
    method: str
    replicate: int
    value: float
    regret: float
    seconds: float
    error: str = ""
    tree: TreePolicy | None = field(default=None, compare=False)


def _run_single(
    setting: SimulationSpec, method: str, rep: int, seed: int, test_n: int, depth: int
) -> ReplicateResult:
    base = (setting.propensity_scenario, setting.main_effect, setting.contrast)
    dataset_seed = derive_seed("dataset", *base, setting.n, seed, rep)
    # test sets are shared across methods and across training sizes
    test_seed = derive_seed("test", *base, seed, rep)
    method_seed = derive_seed("method", method, *base, setting.n, seed, rep)

    start = time.perf_counter()
    try:
        data, _ = generate(replace(setting, seed=dataset_seed))
        test_spec = replace(setting, n=test_n, seed=test_seed)
        test_data, test_oracle = generate(test_spec)
        tree = learn_with_method(data, method, method_seed, depth)
        assignments = evaluate_policy(tree, test_data.x)
        value = empirical_value(assignments, test_oracle)
        optimal = empirical_value(test_oracle.optimal_rule(test_data.x), test_oracle)
        return ReplicateResult(
            *base,
            n=setting.n,
            method=method,
            replicate=rep,
            value=value,
            regret=optimal - value,
            seconds=time.perf_counter() - start,
            tree=tree,
        )
    except Exception as exc:
        return ReplicateResult(
            *base,
            n=setting.n,
            method=method,
            replicate=rep,
            value=float("nan"),
            regret=float("nan"),
            seconds=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(
    settings: list[SimulationSpec],
    methods: list[str],
    replications: int,
    seed: int = 0,
    test_n: int = DEFAULT_TEST_N,
    depth: int = 2,
    threads: int = 1,
) -> list[ReplicateResult]:
    """Replicated grid run: settings x methods x replications.

    Each job's seeds derive from (setting, method, replicate, seed); the seed
    field of the settings themselves is ignored. Dataset and test-set seeds
    omit the method name, so methods compete on common random numbers.
    Per-replicate failures are recorded in the row, not raised. Output order
    and content are independent of threads.
    """
    if not settings or not methods or replications < 1:
        raise ValueError("need at least one setting, one method, one replication")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    jobs = [
        (setting, method, rep)
        for setting in settings
        for method in methods
        for rep in range(replications)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_single, setting, method, rep, seed, test_n, depth)
                for setting, method, rep in jobs
            ]
            return [f.result() for f in futures]
    return [
        _run_single(setting, method, rep, seed, test_n, depth)
        for setting, method, rep in jobs
    ]


_CSV_FIELDS = (
    "propensity_scenario",
    "main_effect",
    "contrast",
    "n",
    "method",
    "replicate",
    "value",
    "regret",
    "error",
)


def write_results_csv(rows: list[ReplicateResult], path: str | Path) -> None:
    """One row per replicate. Deterministic: wall times go to the timings CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row.propensity_scenario,
                    row.main_effect,
                    row.contrast,
                    row.n,
                    row.method,
                    row.replicate,
                    repr(row.value),
                    repr(row.regret),
                    row.error,
                ]
            )


def write_timings_csv(rows: list[ReplicateResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["propensity_scenario", "main_effect", "contrast", "n",
                         "method", "replicate", "seconds"])
        for row in rows:
            writer.writerow(
                [row.propensity_scenario, row.main_effect, row.contrast, row.n,
                 row.method, row.replicate, repr(row.seconds)]
            )


def summarize_results(
    rows: list[ReplicateResult],
) -> list[dict[str, object]]:
    """Per (setting, method) aggregates over non-failed replicates."""
    groups: dict[tuple, list[ReplicateResult]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row.propensity_scenario, row.main_effect, row.contrast, row.n, row.method)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        members = groups[key]
        ok = [r for r in members if not r.error]
        values = np.array([r.value for r in ok])
        regrets = np.array([r.regret for r in ok])
        summary: dict[str, object] = {
            "propensity_scenario": key[0],
            "main_effect": key[1],
            "contrast": key[2],
            "n": key[3],
            "method": key[4],
            "replications": len(members),
            "failed": len(members) - len(ok),
        }
        if ok:
            q1, q2, q3 = np.percentile(values, [25, 50, 75])
            summary.update(
                mean_value=float(values.mean()),
                sd_value=float(values.std(ddof=1)) if len(ok) > 1 else 0.0,
                median_value=float(q2),
                iqr_value=float(q3 - q1),
                mean_regret=float(regrets.mean()),
            )
        else:
            summary.update(
                mean_value=float("nan"),
                sd_value=float("nan"),
                median_value=float("nan"),
                iqr_value=float("nan"),
                mean_regret=float("nan"),
            )
        out.append(summary)
    return out


def write_summary_csv(rows: list[ReplicateResult], path: str | Path) -> None:
    summaries = summarize_results(rows)
    fields = [
        "propensity_scenario", "main_effect", "contrast", "n", "method",
        "replications", "failed", "mean_value", "sd_value", "median_value",
        "iqr_value", "mean_regret",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for summary in summaries:
            writer.writerow(
                [
                    summary[f] if not isinstance(summary[f], float) else repr(summary[f])
                    for f in fields
                ]
            )
