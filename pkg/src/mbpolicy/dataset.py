"""Data model for observational studies: CSV ingestion and covariate-balance diagnostics.

The central type is :class:`ObservationalDataset`, an immutable (covariates,
treatment, outcome) triple that every estimator in this package consumes.
Balance between the two treatment arms is summarised by normalized
differences, the studentized mean difference per covariate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ObservationalDataset",
    "BalanceReport",
    "CsvSchema",
    "load_csv",
    "normalized_differences",
    "concat_datasets",
]


@dataclass(frozen=True)
class ObservationalDataset:
    """Immutable observational study: n units with p covariates, binary treatment, outcome.

    ``policy_eligible`` marks which covariates a learned policy may split on
    (all by default); estimation always uses every covariate.
    """

    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    policy_eligible: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        w = np.asarray(self.w)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-d, got shape {x.shape}")
        n, p = x.shape
        if n < 2:
            raise ValueError(f"need at least 2 units, got {n}")
        if w.shape != (n,) or y.shape != (n,):
            raise ValueError(
                f"length mismatch: x has {n} rows, w has {w.shape}, y has {y.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains missing or non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains missing or non-finite entries")
        wf = w.astype(float)
        if not np.all((wf == 0.0) | (wf == 1.0)):
            bad = int(np.flatnonzero((wf != 0.0) & (wf != 1.0))[0])
            raise ValueError(f"treatment must be 0 or 1 exactly; unit {bad} has w={w[bad]!r}")
        names = tuple(self.feature_names)
        if len(names) != p:
            raise ValueError(f"{p} covariate columns but {len(names)} feature names")
        if len(set(names)) != p:
            raise ValueError("feature names must be unique")
        eligible = tuple(self.policy_eligible) if self.policy_eligible else (True,) * p
        if len(eligible) != p:
            raise ValueError(f"policy_eligible has length {len(eligible)}, expected {p}")
        wi = np.ascontiguousarray(wf.astype(np.int64))
        y = np.ascontiguousarray(y)
        for arr in (x, wi, y):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", wi)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "policy_eligible", eligible)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.w == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.w == 0))

    def arm_indices(self, w: int) -> np.ndarray:
        return np.flatnonzero(self.w == w)

    def excluding_from_policy(self, names: Sequence[str]) -> "ObservationalDataset":
        """Copy with the given covariates marked ineligible for policy splits."""
        unknown = [nm for nm in names if nm not in self.feature_names]
        if unknown:
            raise ValueError(f"unknown feature names: {unknown}")
        eligible = tuple(
            flag and (nm not in names)
            for nm, flag in zip(self.feature_names, self.policy_eligible)
        )
        if not any(eligible):
            raise ValueError("exclusion leaves no policy-eligible features")
        return replace(self, policy_eligible=eligible)

    def eligible_feature_indices(self) -> tuple[int, ...]:
        return tuple(j for j, flag in enumerate(self.policy_eligible) if flag)

    def subset(self, indices: np.ndarray) -> "ObservationalDataset":
        """Row subset (e.g. one cross-validation fold), preserving metadata."""
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self, x=self.x[indices], w=self.w[indices], y=self.y[indices]
        )


@dataclass(frozen=True)
class BalanceReport:
    """Per-covariate normalized differences between the two arms."""

    feature_names: tuple[str, ...]
    normalized_diffs: tuple[float, ...]
    n_control: int
    n_treated: int

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.normalized_diffs))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "normalized_difference"])
            for name, value in zip(self.feature_names, self.normalized_diffs):
                writer.writerow([name, repr(float(value))])


@dataclass(frozen=True)
class CsvSchema:
    """Column-role mapping for CSV ingestion: roles are assigned by header name."""

    treatment: str
    outcome: str
    covariates: tuple[str, ...]

    def __post_init__(self) -> None:
        cov = tuple(self.covariates)
        if not cov:
            raise ValueError("schema needs at least one covariate column")
        roles = [self.treatment, self.outcome, *cov]
        if len(set(roles)) != len(roles):
            raise ValueError("schema assigns one column to multiple roles")
        object.__setattr__(self, "covariates", cov)


def load_csv(path: str | Path, schema: CsvSchema) -> ObservationalDataset:
    """Load a UTF-8, comma-delimited, headered CSV into a dataset.

    Rows keep file order. Any unparsable cell is an error naming the data row
    (1-based, header excluded) and the column; nothing is silently dropped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        col_of = {name: idx for idx, name in enumerate(header)}
        needed = [schema.treatment, schema.outcome, *schema.covariates]
        missing = [name for name in needed if name not in col_of]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}; header is {header}")

        w_col = col_of[schema.treatment]
        y_col = col_of[schema.outcome]
        x_cols = [col_of[name] for name in schema.covariates]

        x_rows: list[list[float]] = []
        w_vals: list[int] = []
        y_vals: list[float] = []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_num} has {len(row)} fields, expected {len(header)}"
                )

            def parse(col: int, colname: str) -> float:
                cell = row[col].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {row_num}, column {colname!r}: "
                        f"could not parse {cell!r} as a number"
                    ) from None
                if not np.isfinite(value):
                    raise ValueError(
                        f"{path}: row {row_num}, column {colname!r}: non-finite value {cell!r}"
                    )
                return value

            w_raw = parse(w_col, schema.treatment)
            if w_raw not in (0.0, 1.0):
                raise ValueError(
                    f"{path}: row {row_num}, column {schema.treatment!r}: "
                    f"treatment must be 0 or 1, got {row[w_col].strip()!r}"
                )
            w_vals.append(int(w_raw))
            y_vals.append(parse(y_col, schema.outcome))
            x_rows.append([parse(c, name) for c, name in zip(x_cols, schema.covariates)])

    if len(x_rows) < 2:
        raise ValueError(f"{path}: found {len(x_rows)} data rows, need at least 2")
    return ObservationalDataset(
        x=np.array(x_rows, dtype=float),
        w=np.array(w_vals, dtype=np.int64),
        y=np.array(y_vals, dtype=float),
        feature_names=schema.covariates,
    )


def normalized_differences(data: ObservationalDataset) -> BalanceReport:
    """Normalized difference per covariate: (mean1 - mean0) / sqrt((s1^2 + s0^2)/2).

    Sample variances use the (n_w - 1) denominator. Requires both arms to have
    at least 2 units and a positive pooled variance term for every feature.
    """
    idx0 = data.arm_indices(0)
    idx1 = data.arm_indices(1)
    if len(idx0) < 2 or len(idx1) < 2:
        raise ValueError(
            f"each arm needs >= 2 units for sample variances; "
            f"got n0={len(idx0)}, n1={len(idx1)}"
        )
    x0, x1 = data.x[idx0], data.x[idx1]
    mean0, mean1 = x0.mean(axis=0), x1.mean(axis=0)
    var0 = x0.var(axis=0, ddof=1)
    var1 = x1.var(axis=0, ddof=1)
    pooled = (var0 + var1) / 2.0
    dead = np.flatnonzero(pooled <= 0.0)
    if dead.size:
        names = [data.feature_names[j] for j in dead]
        raise ValueError(f"zero pooled variance for feature(s) {names}")
    diffs = (mean1 - mean0) / np.sqrt(pooled)
    return BalanceReport(
        feature_names=data.feature_names,
        normalized_diffs=tuple(float(d) for d in diffs),
        n_control=len(idx0),
        n_treated=len(idx1),
    )


def concat_datasets(
    first: ObservationalDataset, second: ObservationalDataset
) -> ObservationalDataset:
    """Row-append two datasets with identical feature names (e.g. DW + CPS3 controls)."""
    if first.feature_names != second.feature_names:
        raise ValueError(
            f"feature names differ: {first.feature_names} vs {second.feature_names}"
        )
    if first.policy_eligible != second.policy_eligible:
        raise ValueError("policy-eligibility flags differ between the datasets")
    return ObservationalDataset(
        x=np.vstack([first.x, second.x]),
        w=np.concatenate([first.w, second.w]),
        y=np.concatenate([first.y, second.y]),
        feature_names=first.feature_names,
        policy_eligible=first.policy_eligible,
    )
