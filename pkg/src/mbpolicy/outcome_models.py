"""Per-arm outcome regressions used for bias correction and evaluation plug-ins.

Two fitting routes: ordinary least squares on (1, X), and lasso on the
quadratic expansion (1, X, squares, pairwise interactions) solved by cyclic
coordinate descent with soft-thresholding along a warm-started descending
penalty grid, the penalty chosen by seeded k-fold cross-validation.

CV folds are plain seeded shuffles (not treatment-stratified; fits are
per-arm, so stratification has nothing to act on).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import ObservationalDataset

__all__ = [
    "OutcomeModel",
    "expand_features",
    "fit_ols_per_arm",
    "fit_lasso_per_arm",
    "predict",
    "predict_matrix",
    "default_lambda_grid",
]

CD_TOL = 1e-7          # stop a penalty step when max coefficient change is below this
CD_MAX_CYCLES = 10_000
GRID_SIZE = 100
GRID_RATIO = 1e-4      # smallest grid entry = GRID_RATIO * lambda_max


def expand_features(x: np.ndarray, expansion: str) -> np.ndarray:
    """Expanded design without intercept column.

    ``linear``    -> (x_1, ..., x_p)
    ``quadratic`` -> (x_1, ..., x_p, x_1^2, ..., x_p^2, x_j x_k for j < k)
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if expansion == "linear":
        return x
    if expansion == "quadratic":
        p = x.shape[1]
        cols = [x, x**2]
        for j in range(p):
            for k in range(j + 1, p):
                cols.append((x[:, j] * x[:, k])[:, None])
        return np.hstack(cols)
    raise ValueError(f"unknown expansion {expansion!r}")


def expanded_dim(p: int, expansion: str) -> int:
    if expansion == "linear":
        return p
    if expansion == "quadratic":
        return 2 * p + p * (p - 1) // 2
    raise ValueError(f"unknown expansion {expansion!r}")


@dataclass(frozen=True)
class OutcomeModel:
    """Per-arm regression fits on a shared feature expansion.

    Coefficient vectors carry the intercept first and live on the original
    (unstandardized) feature scale; the per-arm standardization stats record
    how the lasso design was scaled (zeros/ones for OLS). ``lambda0`` and
    ``lambda1`` are the selected penalties, 0 for OLS.
    """

    expansion: str
    coef0: np.ndarray
    coef1: np.ndarray
    centers0: np.ndarray
    scales0: np.ndarray
    centers1: np.ndarray
    scales1: np.ndarray
    lambda0: float = 0.0
    lambda1: float = 0.0

    def __post_init__(self) -> None:
        for name in ("coef0", "coef1", "centers0", "scales0", "centers1", "scales1"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = self.centers0.shape[0]
        if self.coef0.shape != (k + 1,) or self.coef1.shape != (k + 1,):
            raise ValueError("coefficient length must be expanded-feature count + 1")

    @property
    def n_expanded(self) -> int:
        return self.centers0.shape[0]

    def to_text(self) -> str:
        """Self-describing serialization; round-trips exactly via from_text."""
        payload = {
            "expansion": self.expansion,
            "coef0": self.coef0.tolist(),
            "coef1": self.coef1.tolist(),
            "centers0": self.centers0.tolist(),
            "scales0": self.scales0.tolist(),
            "centers1": self.centers1.tolist(),
            "scales1": self.scales1.tolist(),
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_text(cls, text: str) -> "OutcomeModel":
        payload = json.loads(text)
        return cls(
            expansion=payload["expansion"],
            coef0=np.array(payload["coef0"], dtype=float),
            coef1=np.array(payload["coef1"], dtype=float),
            centers0=np.array(payload["centers0"], dtype=float),
            scales0=np.array(payload["scales0"], dtype=float),
            centers1=np.array(payload["centers1"], dtype=float),
            scales1=np.array(payload["scales1"], dtype=float),
            lambda0=float(payload["lambda0"]),
            lambda1=float(payload["lambda1"]),
        )


def predict_matrix(model: OutcomeModel, x: np.ndarray, w: int) -> np.ndarray:
    """Arm-w predictions for every row of x."""
    if w not in (0, 1):
        raise ValueError(f"w must be 0 or 1, got {w}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    features = expand_features(x, model.expansion)
    if features.shape[1] != model.n_expanded:
        raise ValueError(
            f"dimension mismatch: model expects {model.n_expanded} expanded "
            f"features, got {features.shape[1]}"
        )
    coef = model.coef1 if w == 1 else model.coef0
    return coef[0] + features @ coef[1:]


def predict(model: OutcomeModel, x: np.ndarray, w: int) -> float:
    """Arm-w prediction for a single covariate vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(predict_matrix(model, x, w)[0])


def _arm_views(data: ObservationalDataset) -> list[tuple[np.ndarray, np.ndarray]]:
    return [
        (data.x[data.arm_indices(w)], data.y[data.arm_indices(w)]) for w in (0, 1)
    ]


def fit_ols_per_arm(
    data: ObservationalDataset, expansion: str = "linear"
) -> OutcomeModel:
    """Separate least-squares fit per arm; minimum-norm solution if rank-deficient."""
    for w in (0, 1):
        n_w = int(np.sum(data.w == w))
        if n_w < data.p + 2:
            raise ValueError(
                f"arm {w} has {n_w} units, need >= p+2 = {data.p + 2} for OLS"
            )
    coefs = []
    k = expanded_dim(data.p, expansion)
    for x_arm, y_arm in _arm_views(data):
        design = np.hstack([np.ones((len(y_arm), 1)), expand_features(x_arm, expansion)])
        coef, *_ = np.linalg.lstsq(design, y_arm, rcond=None)
        coefs.append(coef)
    return OutcomeModel(
        expansion=expansion,
        coef0=coefs[0],
        coef1=coefs[1],
        centers0=np.zeros(k),
        scales0=np.ones(k),
        centers1=np.zeros(k),
        scales1=np.ones(k),
    )


def default_lambda_grid(features: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Geometric grid of GRID_SIZE penalties from lambda_max down to GRID_RATIO*lambda_max.

    lambda_max is the smallest penalty zeroing every coefficient:
    max_j |x_j'(y - ybar)| / n on standardized columns.
    """
    xs, _, _ = _standardize(features)
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(xs.T @ yc)) / len(y)) if len(y) else 0.0
    if lam_max <= 0.0:
        lam_max = 1e-12  # degenerate arm (constant outcome); any penalty is equivalent
    return lam_max * np.geomspace(1.0, GRID_RATIO, GRID_SIZE)


def _soft(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _lasso_path(xs: np.ndarray, yc: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Coordinate-descent solutions for centered data along a descending penalty grid.

    Objective: (1/(2n))||yc - xs b||^2 + lambda ||b||_1. Gram-cached updates;
    the penalized objective is asserted non-increasing on every full cycle.
    Returns an array of shape (len(lambdas), k).
    """
    n, k = xs.shape
    gram = xs.T @ xs / n
    corr = xs.T @ yc / n
    y2 = float(yc @ yc) / n
    diag = np.diag(gram).copy()
    beta = np.zeros(k)
    out = np.empty((len(lambdas), k))
    for step, lam in enumerate(lambdas):
        q = gram @ beta  # refresh to stop incremental drift accumulating across steps
        prev_obj = np.inf
        for _ in range(CD_MAX_CYCLES):
            max_delta = 0.0
            for j in range(k):
                if diag[j] <= 0.0:
                    continue  # zero-variance column stays at coefficient 0
                rho = corr[j] - q[j] + diag[j] * beta[j]
                new = _soft(rho, lam) / diag[j]
                delta = new - beta[j]
                if delta != 0.0:
                    q += delta * gram[:, j]
                    beta[j] = new
                    max_delta = max(max_delta, abs(delta))
            obj = 0.5 * (y2 - 2.0 * float(corr @ beta) + float(beta @ q)) + lam * float(
                np.sum(np.abs(beta))
            )
            if obj > prev_obj + 1e-10 * max(1.0, abs(prev_obj)):
                raise AssertionError(
                    f"penalized objective increased within a cycle: {prev_obj} -> {obj}"
                )
            prev_obj = obj
            if max_delta < CD_TOL:
                break
        out[step] = beta
    return out


def _standardize(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = features.mean(axis=0)
    scales = features.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return (features - centers) / scales, centers, scales


def _validate_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid < 0):
        raise ValueError("lambda grid must be nonnegative")
    if grid.size > 1 and np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be strictly descending")
    return grid


def fit_lasso_per_arm(
    data: ObservationalDataset,
    lambda_grid: np.ndarray | None = None,
    folds: int = 5,
    seed: int = 0,
) -> OutcomeModel:
    """Quadratic-expansion lasso per arm with seeded k-fold CV over the penalty grid.

    Per arm: expand, standardize non-intercept columns, run the warm-started
    descending path, pick the penalty with minimum mean CV squared error (ties
    to the larger penalty), refit on the whole arm at that penalty, and store
    coefficients on the original scale. The intercept is never penalized.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    arm_coef: list[np.ndarray] = []
    arm_lambda: list[float] = []
    arm_centers: list[np.ndarray] = []
    arm_scales: list[np.ndarray] = []
    for w, (x_arm, y_arm) in enumerate(_arm_views(data)):
        n_w = len(y_arm)
        if n_w < folds:
            raise ValueError(f"arm {w} has {n_w} units, fewer than folds={folds}")
        features = expand_features(x_arm, "quadratic")
        grid = (
            default_lambda_grid(features, y_arm)
            if lambda_grid is None
            else _validate_grid(lambda_grid)
        )

        rng = np.random.default_rng([seed, w])
        perm = rng.permutation(n_w)
        fold_indices = np.array_split(perm, folds)
        cv_sse = np.zeros(len(grid))
        for fold in fold_indices:
            mask = np.ones(n_w, dtype=bool)
            mask[fold] = False
            xs_tr, ctr, sc = _standardize(features[mask])
            y_tr = y_arm[mask]
            path = _lasso_path(xs_tr, y_tr - y_tr.mean(), grid)
            xs_val = (features[fold] - ctr) / sc
            preds = y_tr.mean() + xs_val @ path.T  # (n_val, n_lambda)
            cv_sse += np.sum((preds - y_arm[fold][:, None]) ** 2, axis=0)
        best = int(np.argmin(cv_sse / n_w))

        xs, ctr, sc = _standardize(features)
        path = _lasso_path(xs, y_arm - y_arm.mean(), grid[: best + 1])
        beta = path[-1] / sc
        intercept = y_arm.mean() - float(beta @ ctr)
        arm_coef.append(np.concatenate([[intercept], beta]))
        arm_lambda.append(float(grid[best]))
        arm_centers.append(ctr)
        arm_scales.append(sc)

    return OutcomeModel(
        expansion="quadratic",
        coef0=arm_coef[0],
        coef1=arm_coef[1],
        centers0=arm_centers[0],
        scales0=arm_scales[0],
        centers1=arm_centers[1],
        scales1=arm_scales[1],
        lambda0=arm_lambda[0],
        lambda1=arm_lambda[1],
    )
