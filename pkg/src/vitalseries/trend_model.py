"""Log-linear Poisson regression with trend and an optional level shift.

The no-change model has mean ``exp(a + b*year)``.  The shifted model keeps
the trend ``b`` but moves the intercept to ``a*`` strictly after a change
year.  A second alternative frees the trend as well (used by the
level-or-trend scan).  All log-likelihoods drop the additive factorial
constant, so likelihood *differences* between nested fits are exact.

Fitting is damped Newton on the concave log-likelihood, batched across
many candidate change years at once.  The design columns are ``1``, the
post-change step, ``t`` and their product, so every gradient and Hessian
entry reduces to a handful of weighted moment sums; years are centered
internally for conditioning and intercepts reported on the original year
scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTau
from .series import CountSeries

MAX_ITER = 100
LOGLIK_RTOL = 1e-10
STEP_TOL = 1e-8


@dataclass(frozen=True)
class TrendPoissonFit:
    """Maximized fit of one segment model.

    ``alpha_star`` is ``None`` for the no-change model.  ``beta_star`` is
    set only by the level-or-trend alternative.  When a segment holds no
    positive count its intercept MLE sits at the boundary: the intercept
    is reported as ``-inf`` and ``at_boundary`` is set; that segment
    contributes exactly 0 to ``log_lik``.
    """

    alpha: float
    beta: float
    log_lik: float
    converged: bool
    iterations: int
    alpha_star: float | None = None
    beta_star: float | None = None
    at_boundary: bool = False


class _StepDesign:
    """Implicit design [1, S, t, S*t] shared by all fits in a batch.

    ``S`` is the per-row post-change indicator ((B, n) float) or ``None``
    for 2-parameter fits; ``mask`` restricts rows to a segment.  Rows of
    the parameter matrix are (a, d, b[, g]) with mean
    ``exp(a + d*S + b*t + g*S*t)``.
    """

    def __init__(self, x, t, S=None, mask=None, free_trend=False):
        self.x = x
        self.t = t
        self.t2 = t * t
        self.S = S
        self.St = None if S is None else S * t
        self.mask = mask
        self.free_trend = free_trend
        self.p = 2 if S is None else (4 if free_trend else 3)
        xm = x if mask is None else mask * x
        self.xm = xm
        if mask is None:
            self.sx = float(x.sum())
            self.sxt = float(x @ t)
        else:
            self.sx = xm.sum(axis=1)
            self.sxt = xm @ t
        if S is not None:
            xmS = xm * S if mask is not None else x * S
            self.sxS = xmS.sum(axis=1)
            self.sxSt = xmS @ t
        self.gtol = 1e-9 * np.maximum(1.0, xm.sum() if mask is None else xm.sum(axis=1))

    def eta(self, theta):
        out = theta[:, 0][:, None] + theta[:, -1 if self.S is None else 2][:, None] * self.t
        if self.S is not None:
            out += theta[:, 1][:, None] * self.S
            if self.free_trend:
                out += theta[:, 3][:, None] * self.St
        return out

    def ll_and_ml(self, theta):
        eta = self.eta(theta)
        s1 = eta @ self.x if self.mask is None else (self.xm * eta).sum(axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            ml = np.exp(eta, out=eta)
            if self.mask is not None:
                ml *= self.mask
            ll = s1 - ml.sum(axis=1)
        return ll, ml

    def grad_hess(self, ml):
        A = ml.sum(axis=1)
        Bm = ml @ self.t
        C = ml @ self.t2
        if self.S is None:
            g = np.stack([self.sx - A, self.sxt - Bm], axis=1)
            H = np.empty((ml.shape[0], 2, 2))
            H[:, 0, 0] = A
            H[:, 0, 1] = H[:, 1, 0] = Bm
            H[:, 1, 1] = C
            return g, H
        mlS = ml * self.S
        Ap = mlS.sum(axis=1)
        Bp = mlS @ self.t
        if not self.free_trend:
            g = np.stack([self.sx - A, self.sxS - Ap, self.sxt - Bm], axis=1)
            H = np.empty((ml.shape[0], 3, 3))
            H[:, 0, 0] = A
            H[:, 0, 1] = H[:, 1, 0] = H[:, 1, 1] = Ap
            H[:, 0, 2] = H[:, 2, 0] = Bm
            H[:, 1, 2] = H[:, 2, 1] = Bp
            H[:, 2, 2] = C
            return g, H
        Cp = mlS @ self.t2
        g = np.stack([self.sx - A, self.sxS - Ap, self.sxt - Bm, self.sxSt - Bp], axis=1)
        H = np.empty((ml.shape[0], 4, 4))
        H[:, 0, 0] = A
        H[:, 0, 1] = H[:, 1, 0] = H[:, 1, 1] = Ap
        H[:, 0, 2] = H[:, 2, 0] = Bm
        H[:, 0, 3] = H[:, 3, 0] = H[:, 1, 2] = H[:, 2, 1] = H[:, 1, 3] = H[:, 3, 1] = Bp
        H[:, 2, 2] = C
        H[:, 2, 3] = H[:, 3, 2] = H[:, 3, 3] = Cp
        return g, H


def _solve(H, g, run):
    p = H.shape[1]
    if p == 2:
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            da = (g[:, 0] * H[:, 1, 1] - g[:, 1] * H[:, 0, 1]) / det
            db = (H[:, 0, 0] * g[:, 1] - H[:, 0, 1] * g[:, 0]) / det
        return np.stack([da, db], axis=1)
    # Frozen rows get an identity system so the batched solve stays valid.
    Hs = np.where(run[:, None, None], H, np.eye(p))
    gs = np.where(run[:, None], g, 0.0)
    try:
        return np.linalg.solve(Hs, gs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        delta = np.zeros_like(gs)
        for k in np.flatnonzero(run):
            delta[k] = np.linalg.lstsq(Hs[k], gs[k], rcond=None)[0]
        return delta


def _newton(design: _StepDesign, theta0, max_iter=MAX_ITER):
    """Damped Newton ascent; returns theta, log_lik, converged, iterations."""
    theta = np.array(theta0, dtype=float, copy=True)
    B = theta.shape[0]
    iters = np.zeros(B, dtype=np.int64)
    converged = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    ll, ml = design.ll_and_ml(theta)
    dll = np.full(B, np.inf)
    last_step = np.full(B, np.inf)

    for _ in range(max_iter):
        g, H = design.grad_hess(ml)
        spec_stop = (dll <= LOGLIK_RTOL * (1.0 + np.abs(ll))) | (last_step <= STEP_TOL)
        small_grad = np.abs(g).max(axis=1) <= design.gtol
        converged |= ~failed & small_grad & (spec_stop | (iters == 0))
        run = ~converged & ~failed
        if not run.any():
            break
        delta = _solve(H, g, run)
        bad = run & ~np.all(np.isfinite(delta), axis=1)
        if bad.any():
            failed |= bad
            delta[bad] = 0.0
            run &= ~bad
            if not run.any():
                break

        # Damped update: halve any step that lowers the log-likelihood.
        step = np.where(run, 1.0, 0.0)
        ll_old = ll
        for _halve in range(40):
            cand = theta + step[:, None] * delta
            ll_new, ml_new = design.ll_and_ml(cand)
            worse = run & ~(ll_new >= ll_old - 1e-12 * (1.0 + np.abs(ll_old)))
            if not worse.any():
                break
            step[worse] *= 0.5
        applied = step[:, None] * delta
        theta = theta + applied
        ll = np.where(run, ll_new, ll)
        ml = np.where(run[:, None], ml_new, ml)
        dll = np.where(run, np.abs(ll_new - ll_old), dll)
        last_step = np.where(run, np.abs(applied).max(axis=1), last_step)
        iters[run] += 1

    return theta, ll, converged, iters


def _moment_start(x, tc):
    """Deterministic warm start: log-linear moment fit of the trend.

    The optimum is unique (concave likelihood), so the start only affects
    iteration counts; this one lands within a few Newton steps of it.
    """
    z = np.log(x + 0.5)
    denom = float((tc * tc).sum())
    beta0 = float((tc * (z - z.mean())).sum() / denom) if denom > 0 else 0.0
    return beta0


def _segment_sums(series: CountSeries, taus: np.ndarray):
    """Per-tau used-count totals before and after the change year."""
    y = series.used_years
    x = series.used_counts
    post = y[None, :] > taus[:, None]
    pre_sum = np.where(~post, x[None, :], 0).sum(axis=1)
    post_sum = np.where(post, x[None, :], 0).sum(axis=1)
    return pre_sum, post_sum, post


def _null_arrays(series: CountSeries):
    y = series.used_years.astype(float)
    x = series.used_counts.astype(float)
    center = y.mean()
    return x, y - center, center


def fit_null(series: CountSeries) -> TrendPoissonFit:
    """Fit the no-change model ``exp(a + b*year)`` over usable points."""
    x, tc, center = _null_arrays(series)
    if x.sum() == 0:
        return TrendPoissonFit(-math.inf, 0.0, 0.0, True, 0, at_boundary=True)
    b0 = _moment_start(x, tc)
    a0 = math.log(max(x.sum(), 0.5) / np.exp(b0 * tc).sum())
    design = _StepDesign(x, tc)
    theta, ll, conv, iters = _newton(design, np.array([[a0, b0]]))
    a, b = theta[0]
    return TrendPoissonFit(a - b * center, b, float(ll[0]), bool(conv[0]), int(iters[0]))


def _segment_fit(series, seg_mask):
    """2-parameter fit restricted to one segment (B segments at once)."""
    x, tc, center = _null_arrays(series)
    B = seg_mask.shape[0]
    m = seg_mask.astype(float)
    b0 = _moment_start(x, tc)
    e0 = np.exp(b0 * tc)
    a0 = np.log(np.maximum(m @ x, 0.5) / (m @ e0))
    design = _StepDesign(x, tc, mask=m)
    theta0 = np.column_stack([a0, np.full(B, b0)])
    theta, ll, conv, iters = _newton(design, theta0)
    return theta, ll, conv, iters, center


def fit_change_batch(series: CountSeries, taus, min_seg: int = 1,
                     free_trend: bool = False) -> list[TrendPoissonFit]:
    """Fit the shifted-intercept model at every tau in ``taus``.

    With ``free_trend`` the post-change segment also gets its own trend
    (the level-or-trend alternative).  Change years must leave at least
    ``min_seg`` usable points on each side.
    """
    taus = np.asarray(taus, dtype=np.int64)
    x, tc, center = _null_arrays(series)
    pre_sum, post_sum, post = _segment_sums(series, taus)
    n_pre = (~post).sum(axis=1)
    n_post = post.sum(axis=1)
    if np.any(n_pre < min_seg) or np.any(n_post < min_seg):
        bad = taus[(n_pre < min_seg) | (n_post < min_seg)]
        raise InvalidTau(
            f"{series.district_id}: change at {bad.tolist()} leaves a segment "
            f"shorter than min_seg={min_seg}"
        )

    out: list[TrendPoissonFit | None] = [None] * taus.size
    both_zero = (pre_sum == 0) & (post_sum == 0)
    pre_zero = (pre_sum == 0) & ~both_zero
    post_zero = (post_sum == 0) & ~both_zero
    regular = ~(both_zero | pre_zero | post_zero)

    for k in np.flatnonzero(both_zero):
        out[k] = TrendPoissonFit(-math.inf, 0.0, 0.0, True, 0,
                                 alpha_star=-math.inf,
                                 beta_star=0.0 if free_trend else None,
                                 at_boundary=True)

    # One all-zero segment: its supremum contribution is 0, so the total
    # log-likelihood is the 2-parameter fit on the other segment alone.
    for zero_mask, fit_on_post in ((pre_zero, True), (post_zero, False)):
        idx = np.flatnonzero(zero_mask)
        if idx.size == 0:
            continue
        seg = post[idx] if fit_on_post else ~post[idx]
        theta, ll, conv, iters, _ = _segment_fit(series, seg)
        for j, k in enumerate(idx):
            a = theta[j, 0] - theta[j, 1] * center
            b = float(theta[j, 1])
            if fit_on_post:
                out[k] = TrendPoissonFit(
                    -math.inf, 0.0 if free_trend else b, float(ll[j]),
                    bool(conv[j]), int(iters[j]), alpha_star=a,
                    beta_star=b if free_trend else None, at_boundary=True)
            else:
                out[k] = TrendPoissonFit(
                    a, b, float(ll[j]), bool(conv[j]), int(iters[j]),
                    alpha_star=-math.inf,
                    beta_star=0.0 if free_trend else None, at_boundary=True)

    idx = np.flatnonzero(regular)
    if idx.size:
        S = post[idx].astype(float)
        B = idx.size
        b0 = _moment_start(x, tc)
        e0 = np.exp(b0 * tc)
        a0 = np.log(pre_sum[idx] / ((1.0 - S) @ e0))
        d0 = np.log(post_sum[idx] / (S @ e0)) - a0
        theta0 = np.zeros((B, 4 if free_trend else 3))
        theta0[:, 0] = a0
        theta0[:, 1] = d0
        theta0[:, 2] = b0
        design = _StepDesign(x, tc, S=S, free_trend=free_trend)
        theta, ll, conv, iters = _newton(design, theta0)
        for j, k in enumerate(idx):
            a = theta[j, 0]
            d = theta[j, 1]
            b = theta[j, 2]
            if free_trend:
                g = theta[j, 3]
                out[k] = TrendPoissonFit(
                    a - b * center, b, float(ll[j]), bool(conv[j]), int(iters[j]),
                    alpha_star=(a + d) - (b + g) * center, beta_star=b + g)
            else:
                out[k] = TrendPoissonFit(
                    a - b * center, b, float(ll[j]), bool(conv[j]), int(iters[j]),
                    alpha_star=(a + d) - b * center)
    return out  # type: ignore[return-value]


def fit_change(series: CountSeries, tau: int, min_seg: int = 1) -> TrendPoissonFit:
    """Fit the shared-trend, shifted-intercept model for a change at ``tau``."""
    return fit_change_batch(series, np.array([tau]), min_seg=min_seg)[0]


def fit_level_trend_change(series: CountSeries, tau: int, min_seg: int = 1) -> TrendPoissonFit:
    """Fit the alternative with both intercept and trend free after ``tau``."""
    return fit_change_batch(series, np.array([tau]), min_seg=min_seg, free_trend=True)[0]


def fitted_means(fit: TrendPoissonFit, years, tau: int | None = None) -> np.ndarray:
    """Evaluate the fitted mean curve at the given years."""
    years = np.asarray(years, dtype=float)
    with np.errstate(over="ignore"):
        pre = np.exp(fit.alpha + fit.beta * years)
        if tau is None or fit.alpha_star is None:
            return pre
        b_post = fit.beta if fit.beta_star is None else fit.beta_star
        post = np.exp(fit.alpha_star + b_post * years)
    return np.where(years <= tau, pre, post)


def log_likelihood(series: CountSeries, means) -> float:
    """Dropped-constant Poisson log-likelihood of given means (oracle aid)."""
    x = series.used_counts.astype(float)
    mu = np.asarray(means, dtype=float)[series.used]
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where((x == 0) & (mu == 0), 0.0, x * np.log(mu))
    return float((term - mu).sum())
