"""Classification metrics, calibration binning, Spearman and OLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

N_BINS = 15
PROB_FLOOR = 1e-12


class DegenerateLabelsError(ValueError):
    def __init__(self, msg="degenerate_labels"):
        super().__init__(msg)


def _check(probs, y):
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y, dtype=int)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: probs {probs.shape}, labels {y.shape}")
    if probs.shape[0] == 0:
        raise ValueError("empty prediction batch")
    return probs, y


def top1_accuracy(probs, y):
    probs, y = _check(probs, y)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def binary_auc(scores, positive):
    """Mann-Whitney AUC with average ranks (ties count one half)."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError()
    ranks = stats.rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auroc_ovr(probs, y, return_skipped=False):
    """Unweighted one-vs-rest AUROC over classes with both positives and negatives."""
    probs, y = _check(probs, y)
    aucs, skipped = [], []
    for k in range(probs.shape[1]):
        pos = y == k
        if pos.all() or not pos.any():
            skipped.append(k)
            continue
        aucs.append(binary_auc(probs[:, k], pos))
    if not aucs:
        raise DegenerateLabelsError()
    score = float(np.mean(aucs))
    return (score, skipped) if return_skipped else score


def nll(probs, y, floor=PROB_FLOOR):
    """Mean negative natural-log probability of the true class."""
    probs, y = _check(probs, y)
    p = np.clip(probs[np.arange(len(y)), y], floor, 1.0)
    return float(-np.mean(np.log(p)))


@dataclass
class ReliabilityBins:
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray
    acc: np.ndarray
    conf: np.ndarray

    @property
    def n(self):
        return int(self.count.sum())

    def ece(self):
        n = self.n
        return float(np.sum(self.count / n * np.abs(self.acc - self.conf)))

    def rows(self):
        for row in zip(self.lo, self.hi, self.count, self.acc, self.conf):
            yield float(row[0]), float(row[1]), int(row[2]), float(row[3]), float(row[4])


def bin_index(confidence, n_bins=N_BINS):
    """0-based bin of each confidence under half-open bins ((m-1)/M, m/M]."""
    upper = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(upper, np.asarray(confidence, dtype=float), side="left")
    return np.clip(idx, 0, n_bins - 1)


def reliability_bins(probs, y, n_bins=N_BINS):
    probs, y = _check(probs, y)
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == y).astype(float)
    idx = bin_index(conf, n_bins)
    count = np.bincount(idx, minlength=n_bins).astype(int)
    hit = np.bincount(idx, weights=correct, minlength=n_bins)
    csum = np.bincount(idx, weights=conf, minlength=n_bins)
    nz = np.maximum(count, 1)
    edges = np.arange(n_bins + 1) / n_bins
    return ReliabilityBins(edges[:-1], edges[1:], count,
                           np.where(count > 0, hit / nz, 0.0),
                           np.where(count > 0, csum / nz, 0.0))


def ece(probs, y, n_bins=N_BINS):
    """Expected calibration error over equal-width confidence bins."""
    return reliability_bins(probs, y, n_bins).ece()


def evaluate(probs, y, n_bins=N_BINS):
    """All four headline metrics for one task; AUROC is NaN if degenerate."""
    try:
        auc, skipped = macro_auroc_ovr(probs, y, return_skipped=True)
    except DegenerateLabelsError:
        auc, skipped = float("nan"), list(range(np.asarray(probs).shape[1]))
    return {
        "accuracy": top1_accuracy(probs, y),
        "auroc": auc,
        "nll": nll(probs, y),
        "ece": ece(probs, y, n_bins),
        "auroc_skipped_classes": skipped,
    }


# -- descriptive statistics ------------------------------------------------------

def spearman_rho(x, y):
    """Spearman rho (Pearson on average ranks) and its t-approximation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman_rho needs two 1-D arrays of equal length")
    n = x.size
    if n < 3:
        raise ValueError("spearman_rho needs at least 3 observations")
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if den == 0:
        raise ValueError("zero rank variance: correlation undefined")
    rho = float(np.clip(np.sum(rx * ry) / den, -1.0, 1.0))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


class RankDeficientError(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear column(s): {self.columns}")


@dataclass
class OLSResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    n: int

    def as_dict(self):
        return {
            "n": self.n,
            "r2": self.r2,
            "terms": {
                nm: {"coef": float(c), "se": float(s), "t": float(t), "p": float(p)}
                for nm, c, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)
            },
        }


def _collinear_columns(X, names, tol):
    out, rank = [], 0
    for j in range(X.shape[1]):
        r = np.linalg.matrix_rank(X[:, : j + 1], tol=tol)
        if r == rank:
            out.append(names[j])
        rank = r
    return out


def ols_fit(X, y, names=None, add_intercept=False):
    """Least squares via QR; raises :class:`RankDeficientError` naming the culprits."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    names = list(names)
    if add_intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["intercept"] + names
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows ({n}) than columns ({p})")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if np.any(diag <= tol):
        raise RankDeficientError(_collinear_columns(X, names, tol))
    coef = solve_triangular(r, q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    dof = n - p
    sigma2 = rss / dof
    rinv = solve_triangular(r, np.eye(p))
    se = np.sqrt(sigma2 * np.sum(rinv * rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf * np.sign(coef)))
    pval = 2.0 * stats.t.sf(np.abs(t), dof)
    return OLSResult(names, coef, se, t, pval, float(r2), n)
