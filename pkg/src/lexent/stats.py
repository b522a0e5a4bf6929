"""Statistical analyses over per-type score tables.

Correlations (Pearson, Spearman with average ranks), Benjamini-Hochberg
step-up FDR adjustment, standardized multivariate OLS, White's
heteroscedasticity test in its full square-and-cross-product form, and a
Huber IRLS line fit. All functions are pure; p-values use scipy's t and
chi-squared tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as spstats

from lexent.errors import LexentDataError, LexentNumericalError

HUBER_C = 1.345
MAD_TO_SIGMA = 0.6745


class ConstantInputError(LexentNumericalError):
    """Correlation is undefined for zero-variance input."""


class CollinearityError(LexentNumericalError):
    """Design matrix is rank deficient; names the offending columns."""

    def __init__(self, columns: list[str]):
        super().__init__(f"collinear predictor columns: {', '.join(columns)}")
        self.columns = columns


@dataclass
class CorrelationResult:
    method: str
    rho: float
    n: int
    p_value: float
    p_adjusted: float | None = None
    rejected: bool | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rho": self.rho,
            "n": self.n,
            "p_value": self.p_value,
            "p_adjusted": self.p_adjusted,
            "rejected": self.rejected,
        }


@dataclass
class RegressionResult:
    names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    r_squared: float
    n: int
    df_resid: int

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "coefficients": [float(v) for v in self.coefficients],
            "standard_errors": [float(v) for v in self.standard_errors],
            "t_statistics": [float(v) for v in self.t_statistics],
            "p_values": [float(v) for v in self.p_values],
            "r_squared": self.r_squared,
            "n": self.n,
            "df_resid": self.df_resid,
        }


@dataclass
class HeteroTestResult:
    lm_statistic: float
    df: int
    p_value: float

    def to_dict(self) -> dict:
        return {"lm_statistic": self.lm_statistic, "df": self.df, "p_value": self.p_value}


@dataclass
class HuberFitResult:
    slope: float
    intercept: float
    iterations: int
    used_ols_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "iterations": self.iterations,
            "used_ols_fallback": self.used_ols_fallback,
        }


def _check_pair(x, y, min_n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise LexentDataError(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < min_n:
        raise LexentDataError(f"need at least {min_n} pairs, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise LexentDataError("inputs contain non-finite values")
    return x, y


def _corr_with_t_pvalue(x: np.ndarray, y: np.ndarray, method: str) -> CorrelationResult:
    n = len(x)
    cx = x - x.mean()
    cy = y - y.mean()
    vx = float(cx @ cx)
    vy = float(cy @ cy)
    if vx <= 0.0 or vy <= 0.0:
        raise ConstantInputError(f"{method} correlation undefined for constant input")
    rho = float(np.clip((cx @ cy) / math.sqrt(vx * vy), -1.0, 1.0))
    df = n - 2
    if 1.0 - rho * rho <= 0.0:
        p = 0.0
    else:
        t = abs(rho) * math.sqrt(df / (1.0 - rho * rho))
        p = float(2.0 * spstats.t.sf(t, df))
    return CorrelationResult(method=method, rho=rho, n=n, p_value=min(p, 1.0))


def pearson(x, y) -> CorrelationResult:
    """Sample correlation with a two-sided p from the exact t transform."""
    x, y = _check_pair(x, y)
    return _corr_with_t_pvalue(x, y, "pearson")


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    start = 0
    for i in range(1, len(x) + 1):
        if i == len(x) or sx[i] != sx[start]:
            ranks[order[start:i]] = 0.5 * (start + 1 + i)
            start = i
    return ranks


def spearman(x, y) -> CorrelationResult:
    """Pearson on average-ranked data, p via the same t approximation."""
    x, y = _check_pair(x, y)
    result = _corr_with_t_pvalue(average_ranks(x), average_ranks(y), "spearman")
    return result


def bh_adjust(p_values, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up over one family of tests.

    Returns (adjusted p-values, rejection flags), both in input order.
    Rejects the m(k) smallest p-values for the largest k with
    p_(k) <= k * alpha / m; adjusted p_(i) = min_{j >= i} m * p_(j) / j.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise LexentDataError("p_values must be a one-dimensional vector")
    if len(p) == 0:
        return np.array([], dtype=np.float64), np.array([], dtype=bool)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise LexentDataError("p-values must lie in [0, 1]")
    if not 0.0 < alpha < 1.0:
        raise LexentDataError(f"alpha must be in (0, 1), got {alpha}")
    m = len(p)
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    ranks = np.arange(1, m + 1, dtype=np.float64)

    scaled = sorted_p * m / ranks
    adjusted_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)

    passing = np.nonzero(sorted_p <= ranks * alpha / m)[0]
    k = passing[-1] + 1 if passing.size else 0
    rejected_sorted = np.zeros(m, dtype=bool)
    rejected_sorted[:k] = True

    adjusted = np.empty(m)
    rejected = np.empty(m, dtype=bool)
    adjusted[order] = adjusted_sorted
    rejected[order] = rejected_sorted
    return adjusted, rejected


def _standardize_columns(X: np.ndarray, names: list[str]) -> np.ndarray:
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1)
    constant = [names[j] for j in range(X.shape[1]) if stds[j] == 0.0]
    if constant:
        raise CollinearityError(constant)
    return (X - means) / stds


def _collinear_columns(Z: np.ndarray, names: list[str]) -> list[str]:
    """Columns expressible (to lstsq precision) from the remaining ones."""
    offenders = []
    for j in range(Z.shape[1]):
        others = np.column_stack([np.ones(Z.shape[0]), np.delete(Z, j, axis=1)])
        coef, _, _, _ = np.linalg.lstsq(others, Z[:, j], rcond=None)
        resid = Z[:, j] - others @ coef
        if float(resid @ resid) < 1e-10 * max(float(Z[:, j] @ Z[:, j]), 1e-30):
            offenders.append(names[j])
    return offenders or list(names)


def ols_standardized(y, X, names: list[str] | None = None) -> RegressionResult:
    """OLS after z-scoring the response and every predictor column.

    Coefficient order is intercept first, then predictors. Standard errors
    come from sigma^2 (X'X)^-1 with df = n - k - 1.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if names is None:
        names = [f"x{j + 1}" for j in range(k)]
    if len(names) != k:
        raise LexentDataError(f"{k} predictors but {len(names)} names")
    if len(y) != n:
        raise LexentDataError(f"y has {len(y)} rows, X has {n}")
    if n <= k + 1:
        raise LexentDataError(f"need n > predictors + 1, got n={n}, predictors={k}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise LexentDataError("inputs contain non-finite values")

    if y.std(ddof=1) == 0.0:
        raise ConstantInputError("response is constant; regression undefined")
    zy = (y - y.mean()) / y.std(ddof=1)
    Z = _standardize_columns(X, names)
    design = np.column_stack([np.ones(n), Z])
    if np.linalg.matrix_rank(design) < k + 1:
        raise CollinearityError(_collinear_columns(Z, names))

    gram = design.T @ design
    beta = np.linalg.solve(gram, design.T @ zy)
    resid = zy - design @ beta
    rss = float(resid @ resid)
    tss = float(zy @ zy)
    df = n - k - 1
    sigma2 = rss / df
    cov = sigma2 * np.linalg.inv(gram)
    se = np.sqrt(np.diag(cov))
    # On an exactly perfect fit se is 0: a zero coefficient is then a definite
    # non-effect (t=0, p=1), a nonzero one a definite effect (t=+-inf, p=0).
    safe_se = np.where(se > 0, se, 1.0)
    with np.errstate(invalid="ignore"):
        tvals = np.where(se > 0, beta / safe_se, np.sign(beta) * np.inf)
    tvals = np.where((se == 0) & (beta == 0), 0.0, tvals)
    pvals = 2.0 * spstats.t.sf(np.abs(tvals), df)
    return RegressionResult(
        names=["intercept"] + list(names),
        coefficients=beta,
        standard_errors=se,
        t_statistics=tvals,
        p_values=pvals,
        r_squared=float(min(max(1.0 - rss / tss, 0.0), 1.0)),
        n=n,
        df_resid=df,
    )


def _white_auxiliary(X: np.ndarray) -> np.ndarray:
    """Predictors, their squares, and pairwise cross-products."""
    cols = [X[:, j] for j in range(X.shape[1])]
    cols += [X[:, j] * X[:, j] for j in range(X.shape[1])]
    for i in range(X.shape[1]):
        for j in range(i + 1, X.shape[1]):
            cols.append(X[:, i] * X[:, j])
    return np.column_stack(cols)


def white_test(y, X) -> HeteroTestResult:
    """White's LM test: n * R^2 of e^2 regressed on the auxiliary design.

    df is the auxiliary regressor count excluding the intercept, reduced
    when auxiliary columns are linearly dependent. Exactly constant
    residuals give LM = 0, p = 1.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if len(y) != n:
        raise LexentDataError(f"y has {len(y)} rows, X has {n}")
    if n <= k + 1:
        raise LexentDataError(f"need n > predictors + 1, got n={n}, predictors={k}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise LexentDataError("inputs contain non-finite values")
    design = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(design) < k + 1:
        raise CollinearityError(_collinear_columns(X, [f"x{j + 1}" for j in range(k)]))
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta

    aux = np.column_stack([np.ones(n), _white_auxiliary(X)])
    df = int(np.linalg.matrix_rank(aux)) - 1
    e2 = resid * resid
    tss = float(np.sum((e2 - e2.mean()) ** 2))
    if tss <= 1e-30 * max(float(e2 @ e2), 1.0) or df < 1:
        return HeteroTestResult(lm_statistic=0.0, df=max(df, 0), p_value=1.0)
    gamma, _, _, _ = np.linalg.lstsq(aux, e2, rcond=None)
    rss = float(np.sum((e2 - aux @ gamma) ** 2))
    r2 = min(max(1.0 - rss / tss, 0.0), 1.0)
    lm = n * r2
    return HeteroTestResult(lm_statistic=lm, df=df, p_value=float(spstats.chi2.sf(lm, df)))


def huber_fit(
    x,
    y,
    c: float = HUBER_C,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> HuberFitResult:
    """Huber-weighted IRLS line fit, scale = MAD / 0.6745 per iteration.

    Starts from OLS; zero MAD with non-vanishing residuals falls back to
    the OLS line (flagged).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or len(x) != len(y):
        raise LexentDataError(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise LexentDataError(f"need at least 3 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise LexentDataError("inputs contain non-finite values")
    design = np.column_stack([np.ones(len(x)), x])
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    ols_beta = beta.copy()
    for iteration in range(1, max_iter + 1):
        resid = y - design @ beta
        med = float(np.median(resid))
        mad = float(np.median(np.abs(resid - med)))
        scale = mad / MAD_TO_SIGMA
        if scale <= 0.0:
            if float(np.max(np.abs(resid))) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
                return HuberFitResult(float(beta[1]), float(beta[0]), iteration, False)
            return HuberFitResult(float(ols_beta[1]), float(ols_beta[0]), iteration, True)
        u = np.abs(resid / scale)
        w = np.where(u <= c, 1.0, c / np.maximum(u, 1e-300))
        sw = np.sqrt(w)
        beta_new, _, _, _ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
        change = float(np.max(np.abs(beta_new - beta)))
        beta = beta_new
        if change < tol:
            break
    return HuberFitResult(float(beta[1]), float(beta[0]), iteration, False)
