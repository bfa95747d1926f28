"""Cross-arm nearest-neighbor matching with replacement and potential-outcome imputation.

Each unit is matched to the M nearest opposite-arm units under a supplied
metric (exact brute-force scan, ties broken by smallest unit index). The
matched sets drive two imputations of the missing potential outcome: the raw
matched-outcome mean and a regression-adjusted (bias-corrected) variant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ObservationalDataset
from .metric import MahalanobisMetric
from .outcome_models import OutcomeModel, predict_matrix

__all__ = [
    "MatchResult",
    "ImputedPotentialOutcomes",
    "match_units",
    "impute_raw",
    "impute_bias_corrected",
    "k_pi_counts",
]

_DISTANCE_BLOCK = 256  # rows per broadcasted distance block, bounds peak memory


@dataclass(frozen=True)
class MatchResult:
    """Matched sets J_M(i) for all units, their distances, and match-usage counts."""

    m: int
    matched_sets: np.ndarray   # (n, m) original unit indices, nearest first
    distances: np.ndarray      # (n, m) metric distances, parallel to matched_sets
    k_counts: np.ndarray       # (n,) number of times each unit appears in a matched set

    def __post_init__(self) -> None:
        sets = np.ascontiguousarray(np.asarray(self.matched_sets, dtype=np.int64))
        dists = np.ascontiguousarray(np.asarray(self.distances, dtype=float))
        counts = np.ascontiguousarray(np.asarray(self.k_counts, dtype=np.int64))
        n = sets.shape[0]
        if sets.shape != (n, self.m) or dists.shape != (n, self.m) or counts.shape != (n,):
            raise ValueError("inconsistent MatchResult array shapes")
        for arr in (sets, dists, counts):
            arr.setflags(write=False)
        object.__setattr__(self, "matched_sets", sets)
        object.__setattr__(self, "distances", dists)
        object.__setattr__(self, "k_counts", counts)

    @property
    def n(self) -> int:
        return self.matched_sets.shape[0]

    def to_csv(self, path: str | Path) -> None:
        """Diagnostic dump: one row per (unit, rank) pair."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "rank", "matched_index", "distance"])
            for i in range(self.n):
                for r in range(self.m):
                    writer.writerow(
                        [i, r, int(self.matched_sets[i, r]), repr(float(self.distances[i, r]))]
                    )


@dataclass(frozen=True)
class ImputedPotentialOutcomes:
    """Per-unit imputed outcome pair and score gamma_i = y1_i - y0_i.

    The entry for a unit's observed arm is its observed outcome verbatim.
    """

    y0: np.ndarray
    y1: np.ndarray
    gamma: np.ndarray
    variant: str

    def __post_init__(self) -> None:
        if self.variant not in ("raw", "bias_corrected"):
            raise ValueError(f"unknown variant {self.variant!r}")
        y0 = np.ascontiguousarray(np.asarray(self.y0, dtype=float))
        y1 = np.ascontiguousarray(np.asarray(self.y1, dtype=float))
        gamma = np.ascontiguousarray(np.asarray(self.gamma, dtype=float))
        if not (y0.shape == y1.shape == gamma.shape) or y0.ndim != 1:
            raise ValueError("y0, y1, gamma must be equal-length vectors")
        for arr in (y0, y1, gamma):
            arr.setflags(write=False)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "gamma", gamma)

    @property
    def n(self) -> int:
        return self.y0.shape[0]


def match_units(
    data: ObservationalDataset, metric: MahalanobisMetric, m: int
) -> MatchResult:
    """Find the m nearest opposite-arm units for every unit (with replacement).

    Exact O(n^2 p) scan; ties broken by smallest unit index via a stable sort
    over candidates listed in ascending index order. Deterministic.
    """
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if metric.p != data.p:
        raise ValueError(f"metric is {metric.p}-d but data has p={data.p}")
    n0, n1 = data.n_control, data.n_treated
    if min(n0, n1) < m:
        raise ValueError(
            f"each arm needs >= m={m} units; arms have n0={n0}, n1={n1}"
        )

    # Whitened coordinates: metric distance becomes Euclidean distance.
    z = data.x @ metric.whitener()
    n = data.n
    matched_sets = np.empty((n, m), dtype=np.int64)
    dists = np.empty((n, m), dtype=float)
    for w in (0, 1):
        units = data.arm_indices(w)
        cands = data.arm_indices(1 - w)  # ascending original indices
        z_c = z[cands]
        for start in range(0, len(units), _DISTANCE_BLOCK):
            block = units[start : start + _DISTANCE_BLOCK]
            # Explicit differences keep exactly-tied candidates bitwise equal.
            diff = z[block][:, None, :] - z_c[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            order = np.argsort(d2, axis=1, kind="stable")[:, :m]
            matched_sets[block] = cands[order]
            dists[block] = np.sqrt(np.take_along_axis(d2, order, axis=1))

    k_counts = np.bincount(matched_sets.ravel(), minlength=n)
    return MatchResult(m=m, matched_sets=matched_sets, distances=dists, k_counts=k_counts)


def _check_fresh(data: ObservationalDataset, matches: MatchResult) -> None:
    if matches.n != data.n or int(matches.matched_sets.max()) >= data.n:
        raise ValueError("MatchResult does not correspond to this dataset (stale indices)")
    if np.any(data.w[matches.matched_sets] != (1 - data.w)[:, None]):
        raise ValueError("MatchResult arms inconsistent with dataset (stale match)")


def impute_raw(
    data: ObservationalDataset, matches: MatchResult
) -> ImputedPotentialOutcomes:
    """Impute the counterfactual outcome as the unweighted mean over the matched set."""
    _check_fresh(data, matches)
    counterfactual = data.y[matches.matched_sets].mean(axis=1)
    y0 = np.where(data.w == 0, data.y, counterfactual)
    y1 = np.where(data.w == 1, data.y, counterfactual)
    return ImputedPotentialOutcomes(y0=y0, y1=y1, gamma=y1 - y0, variant="raw")


def impute_bias_corrected(
    data: ObservationalDataset, matches: MatchResult, model: OutcomeModel
) -> ImputedPotentialOutcomes:
    """Impute the counterfactual with regression adjustment for covariate discrepancy.

    For unit i with matches j, the counterfactual is the mean over j of
    Y_j + mu_hat(X_i, 1 - W_i) - mu_hat(X_j, 1 - W_i). Since matched units sit
    in the opposite arm, mu_hat(X_j, 1 - W_i) is j's observed-arm prediction.
    """
    _check_fresh(data, matches)
    mu0 = predict_matrix(model, data.x, 0)
    mu1 = predict_matrix(model, data.x, 1)
    mu_counterfactual_self = np.where(data.w == 1, mu0, mu1)
    mu_observed = np.where(data.w == 1, mu1, mu0)
    matched_y = data.y[matches.matched_sets].mean(axis=1)
    matched_mu = mu_observed[matches.matched_sets].mean(axis=1)
    counterfactual = matched_y + mu_counterfactual_self - matched_mu
    y0 = np.where(data.w == 0, data.y, counterfactual)
    y1 = np.where(data.w == 1, data.y, counterfactual)
    return ImputedPotentialOutcomes(y0=y0, y1=y1, gamma=y1 - y0, variant="bias_corrected")


def k_pi_counts(matches: MatchResult, assignments: np.ndarray) -> np.ndarray:
    """Signed match-usage counts K_M(pi, i) = sum over j with i in J_M(j) of (2 pi(X_j) - 1)."""
    assignments = np.asarray(assignments)
    if assignments.shape != (matches.n,):
        raise ValueError(
            f"assignments has shape {assignments.shape}, expected ({matches.n},)"
        )
    signs = 2 * assignments.astype(np.int64) - 1
    out = np.zeros(matches.n, dtype=np.int64)
    np.add.at(out, matches.matched_sets.ravel(), np.repeat(signs, matches.m))
    return out
