"""Linear learners: L1-penalised logistic regression, probit, OLS surrogates."""
from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from ..data import Dataset
from .base import (FitOptions, LearnerError, Scorecard, binary_target, features_of,
                   normalized_weights, predict_proba, register)

log = logging.getLogger(__name__)

SEPARATION_SLOPE = 8.0


def _standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _check_finite(X):
    if not np.all(np.isfinite(X)):
        raise LearnerError("non-finite feature values")


# ---------------------------------------------------------------------------
# L1 logistic regression


def _logistic_loss(eta, y, w, W):
    # log(1 + e^eta) - y * eta, computed stably
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)) / W)


def l1_logistic_objective(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
                          coef: np.ndarray, lam: float) -> float:
    """Mean weighted log-loss plus ``lam * ||coef||_1`` on already standardised ``Z``."""
    return _logistic_loss(b + Z @ coef, y, w, w.sum()) + lam * float(np.abs(coef).sum())


def _polish_intercept(Z, y, w, b, coef, iters=50):
    off = Z @ coef
    for _ in range(iters):
        p = expit(b + off)
        g = np.sum(w * (p - y))
        h = np.sum(w * p * (1 - p))
        if h <= 0:
            break
        step = g / h
        b -= step
        if abs(step) < 1e-14:
            break
    return b


def _fista(Z, y, w, lam, max_iter, tol):
    n, k = Z.shape
    W = w.sum()
    theta = np.zeros(k + 1)          # [intercept, coefs]
    base = np.clip(np.sum(w * y) / W, 1e-12, 1 - 1e-12)
    theta[0] = np.log(base / (1 - base))
    Z1 = np.hstack([np.ones((n, 1)), Z])

    def smooth(t):
        return _logistic_loss(Z1 @ t, y, w, W)

    def grad(t):
        return Z1.T @ (w * (expit(Z1 @ t) - y)) / W

    def prox(t, step):
        out = t.copy()
        out[1:] = np.sign(t[1:]) * np.maximum(np.abs(t[1:]) - step * lam, 0.0)
        return out

    def full(t):
        return smooth(t) + lam * np.abs(t[1:]).sum()

    L = 0.25 * np.linalg.eigvalsh((Z1 * w[:, None]).T @ Z1 / W)[-1] / 16.0
    L = max(L, 1e-8)
    x, yk, tk = theta, theta.copy(), 1.0
    f_old = full(x)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        fy, gy = smooth(yk), grad(yk)
        while True:
            cand = prox(yk - gy / L, 1.0 / L)
            diff = cand - yk
            if smooth(cand) <= fy + gy @ diff + 0.5 * L * diff @ diff + 1e-15:
                break
            L *= 2.0
        f_new = full(cand)
        if f_new > f_old:
            # adaptive restart: drop momentum, take a plain proximal step from x
            tk = 1.0
            yk = x.copy()
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        yk = cand + ((tk - 1) / t_next) * (cand - x)
        converged = abs(f_old - f_new) <= tol * max(1.0, abs(f_new))
        x, tk, f_old = cand, t_next, f_new
        if converged:
            break
    return x[0], x[1:], n_iter


def fit_l1_logistic(d: Dataset, opts: FitOptions | None = None) -> Scorecard:
    """L1-penalised logistic regression by accelerated proximal gradient.

    Features are standardised internally; the intercept is not penalised.
    The objective is the weighted mean log-loss plus ``l1_lambda * ||w||_1``.
    """
    opts = opts or FitOptions()
    X = d.features
    _check_finite(X)
    y = binary_target(d)
    w = normalized_weights(opts, d.n)
    mean, scale = _standardizer(X)
    Z = (X - mean) / scale
    b, coef, n_iter = _fista(Z, y, w, opts.l1_lambda, opts.max_iter, opts.tol)
    coef = np.where(np.abs(coef) < 1e-12, 0.0, coef)
    b = _polish_intercept(Z, y, w, b, coef)
    obj = l1_logistic_objective(Z, y, w, b, coef, opts.l1_lambda)
    return Scorecard(
        "l1_logistic",
        {"intercept": float(b), "coef": coef, "mean": mean, "scale": scale},
        d.k,
        {"n": d.n, "l1_lambda": opts.l1_lambda, "iterations": n_iter, "objective": obj,
         "weighted": opts.sample_weights is not None, "seed": opts.seed.seed},
    )


@register("l1_logistic")
def _predict_l1(m, X):
    p = m.params
    return expit(p["intercept"] + ((X - p["mean"]) / p["scale"]) @ p["coef"])


def select_l1_lambda(train: Dataset, valid: Dataset, grid=(1e-4, 1e-3, 1e-2, 1e-1, 1.0),
                     opts: FitOptions | None = None) -> tuple[float, Scorecard]:
    """Pick the penalty with the lowest validation log-loss; ties go to the larger penalty."""
    opts = opts or FitOptions()
    yv = valid.require_labels().astype(float)
    best = None
    for lam in sorted(grid, reverse=True):
        m = fit_l1_logistic(train, opts.replace(l1_lambda=lam))
        p = np.clip(predict_proba(m, valid), 1e-15, 1 - 1e-15)
        ll = -np.mean(yv * np.log(p) + (1 - yv) * np.log1p(-p))
        if best is None or ll < best[0] - 1e-12:
            best = (ll, lam, m)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# probit


def inverse_mills(idx) -> np.ndarray:
    """phi(idx) / Phi(idx), stable in both tails."""
    idx = np.asarray(idx, dtype=float)
    return np.exp(-0.5 * idx * idx - 0.5 * np.log(2 * np.pi) - log_ndtr(idx))


def _probit_newton(Z1, y, w, ridge, max_iter, tol):
    k1 = Z1.shape[1]
    beta = np.zeros(k1)
    q = 2 * y - 1
    pen = np.full(k1, ridge)
    pen[0] = 0.0

    def loglik(b):
        return float(np.sum(w * log_ndtr(q * (Z1 @ b)))) - 0.5 * float(pen @ (b * b))

    ll = loglik(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z1 @ beta
        lam = q * inverse_mills(q * eta)
        g = Z1.T @ (w * lam) - pen * beta
        hw = w * lam * (lam + eta)
        H = (Z1 * hw[:, None]).T @ Z1 + np.diag(pen)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        beta, ll_old, ll = cand, ll, ll_c
        if np.max(np.abs(t * step)) < 1e-10 or abs(ll - ll_old) < tol * max(1.0, abs(ll)):
            converged = True
            break
        if np.linalg.norm(beta) > 1e3:
            break
    eta = Z1 @ beta
    lam = q * inverse_mills(q * eta)
    H = (Z1 * (w * lam * (lam + eta))[:, None]).T @ Z1 + np.diag(pen)
    # a standardised slope beyond SEPARATION_SLOPE means the likelihood is still climbing towards separation
    ok = converged and np.linalg.norm(beta) <= 1e3 and np.all(np.abs(beta[1:]) <= SEPARATION_SLOPE)
    return beta, H, ok, it


def fit_probit(d: Dataset, opts: FitOptions | None = None, *, target: str = "labels") -> Scorecard:
    """Probit MLE by Newton-Raphson with step halving.

    ``target="accepted"`` regresses the acceptance flag instead of the label.
    On (quasi-)separation a ridge of 1e-6 is added and a warning issued.
    """
    opts = opts or FitOptions()
    X = d.features
    _check_finite(X)
    if target == "accepted":
        if d.accepted is None:
            raise LearnerError("dataset has no acceptance flags")
        y = d.accepted.astype(float)
        if y.min() == y.max():
            raise LearnerError("acceptance flags contain a single class")
    else:
        y = binary_target(d)
    w = normalized_weights(opts, d.n)
    mean, scale = _standardizer(X)
    Z1 = np.hstack([np.ones((d.n, 1)), (X - mean) / scale])
    ridge = 0.0
    beta, H, ok, it = _probit_newton(Z1, y, w, ridge, opts.max_iter, opts.tol)
    if not ok:
        warnings.warn("probit: separation or non-convergence detected; refitting with ridge 1e-6",
                      RuntimeWarning, stacklevel=2)
        ridge = 1e-6
        beta, H, _, it = _probit_newton(Z1, y, w, ridge, opts.max_iter, opts.tol)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.full_like(H, np.nan)
    return Scorecard(
        "probit",
        {"intercept": float(beta[0]), "coef": beta[1:], "mean": mean, "scale": scale, "cov": cov},
        d.k,
        {"n": d.n, "target": target, "ridge": ridge, "iterations": it, "seed": opts.seed.seed},
    )


def probit_index(m: Scorecard, d: "Dataset | np.ndarray") -> np.ndarray:
    """Linear index of a probit scorecard (before applying Phi)."""
    X = features_of(d)
    if X.shape[1] != m.feature_arity:
        raise LearnerError("feature arity mismatch")
    p = m.params
    return p["intercept"] + ((X - p["mean"]) / p["scale"]) @ p["coef"]


def probit_raw_coefficients(m: Scorecard) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients on the original feature scale, ``[intercept, w...]``, and their standard errors."""
    p = m.params
    k = m.feature_arity
    # raw = T @ standardized
    T = np.zeros((k + 1, k + 1))
    T[0, 0] = 1.0
    T[0, 1:] = -p["mean"] / p["scale"]
    T[1:, 1:] = np.diag(1.0 / p["scale"])
    beta = np.concatenate([[p["intercept"]], p["coef"]])
    cov = T @ p["cov"] @ T.T
    return T @ beta, np.sqrt(np.diag(cov))


@register("probit")
def _predict_probit(m, X):
    return ndtr(probit_index(m, X))


# ---------------------------------------------------------------------------
# surrogate


def surrogate_coefficients(m: Scorecard, d: Dataset, *, standardize: bool = True) -> np.ndarray:
    """OLS of ``m``'s predicted PDs on ``d``'s features; returns ``[intercept, slopes...]``.

    With ``standardize`` the slopes refer to features scaled by ``d``'s own
    mean and standard deviation, so surrogates of different scorecards on the
    same data are directly comparable.
    """
    if d.n <= d.k + 1:
        raise LearnerError("surrogate regression needs n > k + 1 rows")
    s = predict_proba(m, d)
    X = d.features
    if standardize:
        mean, scale = _standardizer(X)
        X = (X - mean) / scale
    A = np.hstack([np.ones((d.n, 1)), X])
    AtA = A.T @ A
    if np.linalg.matrix_rank(AtA) < AtA.shape[0]:
        warnings.warn("surrogate: singular design matrix; adding ridge 1e-8", RuntimeWarning, stacklevel=2)
        AtA = AtA + 1e-8 * np.eye(len(AtA))
    return np.linalg.solve(AtA, A.T @ s)
