"""Crossed random-intercepts linear mixed model fitted by profiled REML.

The model is ``y = X beta + sum_g Z_g b_g + e`` with independent random
intercepts per grouping factor, ``b_g ~ N(0, sigma2_g I)`` and
``e ~ N(0, sigma2_eps I)``. Variance ratios ``gamma_g = sigma2_g / sigma2_eps``
are optimized on the log scale with a bounded quasi-Newton method over the
profiled REML criterion; fixed effects and BLUPs come from the penalized
least-squares (Henderson) system at each step, factorized densely for small
level counts and with a sparse symmetric LU beyond that.

Hypothesis tests use Satterthwaite degrees of freedom: the variance of each
coefficient's sampling variance is obtained by numerically differentiating
``Var(beta_k)`` with respect to the variance components and sandwiching with
the inverse information of the components (numeric Hessian of the REML
deviance). Fit quality is summarized by variance partition coefficients and
marginal/conditional R2 computed from the variance components and the
variance of the fixed-effect linear predictor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spl
import scipy.stats

INTERCEPT = "(intercept)"

# log(gamma) box; the lower edge is the singular (zero-variance) regime.
LOG_GAMMA_MIN = -23.0
LOG_GAMMA_MAX = 20.0

# Henderson system solved densely below this many random-effect levels.
DENSE_LEVEL_LIMIT = 600


class DataError(ValueError):
    """Input table violates the model preconditions."""


class ConvergenceError(RuntimeError):
    """Optimizer exhausted its iteration budget; carries best-so-far state."""

    def __init__(self, message: str, result: "FitResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ModelSpec:
    """Response, fixed-effect columns (intercept implicit), grouping factors."""

    response: str = "log_value"
    fixed: tuple[str, ...] = ("time_years", "log_activity")
    random: tuple[str, ...] = ("user_id", "category")

    @classmethod
    def full(cls) -> "ModelSpec":
        return cls()

    @classmethod
    def no_activity(cls) -> "ModelSpec":
        return cls(fixed=("time_years",))

    @property
    def coef_names(self) -> tuple[str, ...]:
        return (INTERCEPT, *self.fixed)


@dataclass(frozen=True)
class FitOptions:
    rel_tol: float = 1e-8
    grad_tol: float = 1e-5
    max_iter: int = 200


@dataclass
class FitResult:
    spec: ModelSpec
    n_obs: int
    coef_names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    df: np.ndarray  # Satterthwaite df; NaN where unavailable
    t: np.ndarray
    p: np.ndarray
    p_normal: np.ndarray
    df_fallback: np.ndarray  # True where p is the normal approximation
    variance_components: dict[str, float]  # per factor, plus "residual"
    vpc: dict[str, float]
    sigma2_fixed: float
    r2_marginal: float
    r2_conditional: float
    reml_deviance: float
    blups: dict[str, pd.Series]
    residuals: np.ndarray  # input row order
    fitted: np.ndarray
    cov_beta: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    boundary_flags: dict[str, bool]
    residual_boundary: bool
    singular: bool
    deviance_history: list[float] = field(default_factory=list)
    n_levels: dict[str, int] = field(default_factory=dict)
    _problem: "RemlProblem | None" = field(default=None, repr=False, compare=False)

    @property
    def theta(self) -> np.ndarray:
        """Variance components in factor order, residual last."""
        return np.array(
            [self.variance_components[f] for f in self.spec.random]
            + [self.variance_components["residual"]]
        )

    def to_dict(self) -> dict:
        return {
            "model": {
                "response": self.spec.response,
                "fixed": list(self.spec.fixed),
                "random": list(self.spec.random),
            },
            "n_obs": self.n_obs,
            "coefficients": {
                name: {
                    "estimate": float(self.beta[i]),
                    "se": float(self.se[i]),
                    "df": None if math.isnan(self.df[i]) else float(self.df[i]),
                    "t": float(self.t[i]),
                    "p": float(self.p[i]),
                    "p_normal": float(self.p_normal[i]),
                    "df_fallback": bool(self.df_fallback[i]),
                }
                for i, name in enumerate(self.coef_names)
            },
            "variance_components": {k: float(v) for k, v in self.variance_components.items()},
            "vpc": {k: float(v) for k, v in self.vpc.items()},
            "sigma2_fixed": float(self.sigma2_fixed),
            "r2_marginal": float(self.r2_marginal),
            "r2_conditional": float(self.r2_conditional),
            "reml_deviance": float(self.reml_deviance),
            "n_levels": dict(self.n_levels),
            "blups": {f: {str(k): float(v) for k, v in s.items()} for f, s in self.blups.items()},
            "residuals": [float(v) for v in self.residuals],
            "fitted": [float(v) for v in self.fitted],
            "cov_beta": [[float(v) for v in row] for row in self.cov_beta],
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "gradient_norm": float(self.gradient_norm),
                "boundary_flags": dict(self.boundary_flags),
                "residual_boundary": self.residual_boundary,
                "singular": self.singular,
            },
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


@dataclass
class PLS:
    """Penalized least-squares solve at one value of the variance ratios."""

    beta: np.ndarray
    u: np.ndarray  # spherical random effects
    b: np.ndarray  # scaled random effects (BLUPs at this theta)
    r2: float  # penalized residual sum of squares
    logdet_p: float
    logdet_s: float
    s_matrix: np.ndarray


class RemlProblem:
    """Preassembled design and cross-products; cheap repeated PLS solves."""

    def __init__(
        self,
        y: np.ndarray,
        x: np.ndarray,
        codes: Sequence[np.ndarray],
        levels: Sequence[np.ndarray],
        coef_names: Sequence[str],
        factor_names: Sequence[str],
    ):
        self.y = y
        self.x = x
        self.codes = [np.asarray(c, dtype=np.int64) for c in codes]
        self.levels = [np.asarray(l) for l in levels]
        self.coef_names = tuple(coef_names)
        self.factor_names = tuple(factor_names)
        self.n, self.p = x.shape
        self.sizes = [len(l) for l in levels]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.q = int(self.offsets[-1])
        self.n_factors = len(codes)

        cols = np.concatenate(
            [self.offsets[f] + self.codes[f] for f in range(self.n_factors)]
        ) if self.n_factors else np.empty(0, dtype=np.int64)
        rows = np.tile(np.arange(self.n), self.n_factors)
        z = sp.csr_matrix(
            (np.ones(len(cols)), (rows, cols)), shape=(self.n, self.q)
        )
        self.z = z
        self.block_of_col = np.concatenate(
            [np.full(self.sizes[f], f, dtype=np.int64) for f in range(self.n_factors)]
        )

        self.xtx = x.T @ x
        self.xty = x.T @ y
        self.ztx = np.asarray((z.T @ x))
        self.zty = np.asarray(z.T @ y).ravel()

        ztz = (z.T @ z).tocsc()
        ztz.sort_indices()
        self.dense = self.q <= DENSE_LEVEL_LIMIT
        if self.dense:
            self.ztz_dense = ztz.toarray()
        else:
            self.ztz = ztz
            self.ztz_col_of_data = np.repeat(
                np.arange(self.q), np.diff(ztz.indptr)
            )
            # positions of diagonal entries inside .data (always present)
            self.ztz_diag_pos = np.flatnonzero(
                ztz.indices == self.ztz_col_of_data
            )

    def _lam_cols(self, gamma: np.ndarray) -> np.ndarray:
        lam_block = np.sqrt(gamma)
        return lam_block[self.block_of_col]

    def pls(self, gamma: np.ndarray) -> PLS:
        lam = self._lam_cols(gamma)
        rhs = np.concatenate([self.ztx, self.zty[:, None]], axis=1) * lam[:, None]

        if self.dense:
            p_mat = self.ztz_dense * np.outer(lam, lam)
            p_mat[np.diag_indices(self.q)] += 1.0
            cho = sla.cho_factor(p_mat, lower=True, check_finite=False)
            sol = sla.cho_solve(cho, rhs, check_finite=False)
            logdet_p = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        else:
            data = self.ztz.data * lam[self.ztz.indices] * lam[self.ztz_col_of_data]
            data[self.ztz_diag_pos] += 1.0
            p_mat = sp.csc_matrix((data, self.ztz.indices, self.ztz.indptr), shape=(self.q, self.q))
            lu = spl.splu(
                p_mat,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            sol = lu.solve(rhs)
            logdet_p = float(np.sum(np.log(np.abs(lu.U.diagonal()))))

        c_mat, cu = sol[:, : self.p], sol[:, self.p]
        a_mat = self.ztx * lam[:, None]
        s_mat = self.xtx - a_mat.T @ c_mat
        rhs_beta = self.xty - a_mat.T @ cu
        try:
            beta = sla.solve(s_mat, rhs_beta, assume_a="pos")
        except np.linalg.LinAlgError as exc:
            raise DataError(f"fixed-effect system is singular: {exc}") from exc
        u = cu - c_mat @ beta
        b = lam * u

        resid = self.y - self.x @ beta - self._z_times(b)
        r2 = float(resid @ resid + u @ u)
        sign, logdet_s = np.linalg.slogdet(s_mat)
        if sign <= 0:
            raise DataError("fixed-effect normal matrix is not positive definite")
        return PLS(beta, u, b, r2, logdet_p, float(logdet_s), s_mat)

    def _z_times(self, b: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        for f in range(self.n_factors):
            out += b[self.offsets[f] + self.codes[f]]
        return out

    def profiled_deviance(self, log_gamma: np.ndarray) -> float:
        pls = self.pls(np.exp(log_gamma))
        nmp = self.n - self.p
        sigma2 = pls.r2 / nmp
        return pls.logdet_p + pls.logdet_s + nmp * (1.0 + math.log(2.0 * math.pi * sigma2))

    def deviance_at(self, theta: np.ndarray) -> float:
        """REML deviance at explicit variance components (residual last)."""
        sigma2_eps = theta[-1]
        pls = self.pls(theta[:-1] / sigma2_eps)
        nmp = self.n - self.p
        return (
            nmp * math.log(sigma2_eps)
            + pls.logdet_p
            + pls.logdet_s
            + pls.r2 / sigma2_eps
            + nmp * math.log(2.0 * math.pi)
        )

    def var_beta(self, theta: np.ndarray) -> np.ndarray:
        """Sampling covariance of the fixed effects at explicit components."""
        sigma2_eps = theta[-1]
        pls = self.pls(theta[:-1] / sigma2_eps)
        return sigma2_eps * np.linalg.inv(pls.s_matrix)


def _component_step(value: float) -> float:
    h = 1e-4 * max(value, 1.0)
    if value > 0 and h > value / 2.0:
        h = value / 2.0
    return h


def satterthwaite_df(
    problem: RemlProblem, theta: np.ndarray, coef_index: int
) -> tuple[float, bool]:
    """Degrees of freedom ``2 f^2 / Var(f)`` for one coefficient's variance.

    Returns ``(df, ok)``; ``ok`` is False (df = NaN) when the delta-method
    variance is not usable, in which case callers fall back to a normal
    approximation.
    """
    df_all, ok_all = _satterthwaite_all(problem, theta)
    return df_all[coef_index], ok_all[coef_index]


def _satterthwaite_all(
    problem: RemlProblem, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    k = len(theta)
    p = problem.p

    f0 = np.diag(problem.var_beta(theta))
    grads = np.zeros((p, k))
    for j in range(k):
        h = _component_step(theta[j])
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = np.diag(problem.var_beta(tp))
        fm = np.diag(problem.var_beta(tm))
        grads[:, j] = (fp - fm) / (2.0 * h)

    hess = _numeric_hessian(problem.deviance_at, theta)
    try:
        cov_theta = 2.0 * np.linalg.pinv(hess)
    except np.linalg.LinAlgError:
        return np.full(p, np.nan), np.zeros(p, dtype=bool)

    df = np.full(p, np.nan)
    ok = np.zeros(p, dtype=bool)
    for i in range(p):
        denom = float(grads[i] @ cov_theta @ grads[i])
        if denom > 0 and np.isfinite(denom):
            val = 2.0 * f0[i] ** 2 / denom
            if np.isfinite(val) and val > 0:
                df[i] = val
                ok[i] = True
    return df, ok


def _numeric_hessian(fun, theta: np.ndarray) -> np.ndarray:
    k = len(theta)
    steps = np.array([_component_step(t) for t in theta])
    hess = np.zeros((k, k))
    f0 = fun(theta)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        fpp = fun(theta + ei)
        fmm = fun(theta - ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / steps[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = steps[j]
            fpj = fun(theta + ei + ej)
            fpm = fun(theta + ei - ej)
            fmp = fun(theta - ei + ej)
            fmj = fun(theta - ei - ej)
            hess[i, j] = hess[j, i] = (fpj - fpm - fmp + fmj) / (4.0 * steps[i] * steps[j])
    return hess


def _numeric_gradient(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def _polish_newton(fun, x: np.ndarray, lo: float, hi: float, max_steps: int = 8):
    """Sharpen the optimizer solution so reported statistics are stable."""
    x = x.copy()
    fx = fun(x)
    for _ in range(max_steps):
        free = (x > lo + 1e-9) & (x < hi - 1e-9)
        if not free.any():
            break
        g = _numeric_gradient(fun, x)
        if np.max(np.abs(g[free])) < 1e-7:
            break
        hess = _numeric_hessian_small(fun, x)
        hf = hess[np.ix_(free, free)]
        gf = g[free]
        try:
            w, v = np.linalg.eigh(hf)
            w = np.maximum(w, 1e-8 * max(1.0, float(np.max(np.abs(w)))))
            step = -(v @ ((v.T @ gf) / w))
        except np.linalg.LinAlgError:
            break
        trial = x.copy()
        scale = 1.0
        improved = False
        for _ in range(20):
            trial[free] = np.clip(x[free] + scale * step, lo, hi)
            ft = fun(trial)
            if ft <= fx:
                x, fx = trial.copy(), ft
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return x, fx


def _numeric_hessian_small(fun, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    k = len(x)
    hess = np.zeros((k, k))
    f0 = fun(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        hess[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / h**2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h * h)
    return hess


def build_problem(table: pd.DataFrame, spec: ModelSpec) -> tuple[RemlProblem, np.ndarray]:
    """Validate and canonicalize the analysis table into a solvable problem.

    Rows are sorted into a canonical order so every reported statistic is
    invariant, bit for bit, under permutations of the input. The returned
    permutation maps canonical positions back to input rows.
    """
    needed = [spec.response, *spec.fixed, *spec.random]
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise DataError(f"table is missing columns: {missing}")

    numeric = table[[spec.response, *spec.fixed]].to_numpy(dtype=float)
    bad = ~np.isfinite(numeric).all(axis=1)
    if bad.any():
        rows = list(table.index[bad][:10])
        raise DataError(f"non-finite values in rows {rows}" + (" ..." if bad.sum() > 10 else ""))

    codes_list, levels_list = [], []
    for factor in spec.random:
        codes, levels = pd.factorize(table[factor].astype(str), sort=True)
        if len(levels) < 2:
            raise DataError(f"grouping factor {factor!r} has fewer than 2 levels")
        codes_list.append(codes.astype(np.int64))
        levels_list.append(np.asarray(levels))

    y = numeric[:, 0]
    x = np.column_stack([np.ones(len(table)), numeric[:, 1:]])
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise DataError("fixed-effect design is rank deficient")

    sort_keys = [y] + [numeric[:, j] for j in range(1, numeric.shape[1])] + codes_list
    order = np.lexsort(tuple(reversed(sort_keys)))

    problem = RemlProblem(
        y=y[order],
        x=x[order],
        codes=[c[order] for c in codes_list],
        levels=levels_list,
        coef_names=spec.coef_names,
        factor_names=spec.random,
    )
    return problem, order


def fit_reml(
    table: pd.DataFrame,
    spec: ModelSpec | None = None,
    opts: FitOptions | None = None,
) -> FitResult:
    """Fit the crossed random-intercepts model and assemble every statistic."""
    spec = spec or ModelSpec.full()
    opts = opts or FitOptions()
    problem, order = build_problem(table, spec)
    nf = problem.n_factors

    history: list[float] = []
    cache: dict[tuple, float] = {}

    def objective(log_gamma: np.ndarray) -> float:
        key = tuple(log_gamma)
        if key not in cache:
            cache[key] = problem.profiled_deviance(np.asarray(log_gamma))
        return cache[key]

    def on_step(xk: np.ndarray) -> None:
        history.append(objective(xk))

    x0 = np.zeros(nf)
    history.append(objective(x0))
    res = scipy.optimize.minimize(
        objective,
        x0,
        method="L-BFGS-B",
        jac="3-point",
        bounds=[(LOG_GAMMA_MIN, LOG_GAMMA_MAX)] * nf,
        callback=on_step,
        options={
            "ftol": opts.rel_tol,
            "gtol": opts.grad_tol,
            "maxiter": opts.max_iter,
            "maxfun": 50 * opts.max_iter,
        },
    )
    log_gamma, dev = _polish_newton(objective, res.x, LOG_GAMMA_MIN, LOG_GAMMA_MAX)
    history.append(dev)

    grad = _numeric_gradient(objective, np.clip(log_gamma, LOG_GAMMA_MIN + 1e-4, LOG_GAMMA_MAX - 1e-4))
    gradient_norm = float(np.max(np.abs(grad)))
    iterations = int(res.nit)
    exhausted = res.status == 1  # iteration/evaluation budget exhausted

    result = _assemble(problem, spec, log_gamma, dev, order, history, iterations, gradient_norm, opts)
    if exhausted:
        raise ConvergenceError(
            f"REML did not converge within {opts.max_iter} iterations", result=result
        )
    return result


def _assemble(
    problem: RemlProblem,
    spec: ModelSpec,
    log_gamma: np.ndarray,
    deviance: float,
    order: np.ndarray,
    history: list[float],
    iterations: int,
    gradient_norm: float,
    opts: FitOptions,
) -> FitResult:
    gamma = np.exp(log_gamma)
    pls = problem.pls(gamma)
    nmp = problem.n - problem.p
    sigma2_eps = pls.r2 / nmp
    sigma2 = gamma * sigma2_eps

    boundary = {
        name: bool(log_gamma[f] <= LOG_GAMMA_MIN + 1e-6)
        for f, name in enumerate(problem.factor_names)
    }
    residual_boundary = bool(np.any(log_gamma >= LOG_GAMMA_MAX - 1e-6))
    singular = any(boundary.values()) or residual_boundary

    theta = np.append(sigma2, sigma2_eps)
    cov_beta = sigma2_eps * np.linalg.inv(pls.s_matrix)
    se = np.sqrt(np.diag(cov_beta))
    beta = pls.beta
    tvals = beta / se
    p_normal = 2.0 * scipy.stats.norm.sf(np.abs(tvals))

    if singular:
        df = np.full(problem.p, np.nan)
        ok = np.zeros(problem.p, dtype=bool)
    else:
        df, ok = _satterthwaite_all(problem, theta)
    pvals = np.where(
        ok, 2.0 * scipy.stats.t.sf(np.abs(tvals), np.where(ok, df, 1.0)), p_normal
    )

    blups: dict[str, pd.Series] = {}
    for f, name in enumerate(problem.factor_names):
        seg = pls.b[problem.offsets[f] : problem.offsets[f + 1]]
        blups[name] = pd.Series(seg.copy(), index=problem.levels[f], name=name)

    fitted_canon = problem.x @ beta + problem._z_times(pls.b)
    resid_canon = problem.y - fitted_canon
    residuals = np.empty_like(resid_canon)
    fitted = np.empty_like(fitted_canon)
    residuals[order] = resid_canon
    fitted[order] = fitted_canon

    linpred = problem.x @ beta
    sigma2_fixed = float(np.var(linpred, ddof=1))
    total = sigma2_fixed + float(np.sum(sigma2)) + sigma2_eps
    random_total = float(np.sum(sigma2)) + sigma2_eps
    vpc = {
        name: float(sigma2[f] / random_total)
        for f, name in enumerate(problem.factor_names)
    }
    r2_marginal = sigma2_fixed / total
    r2_conditional = (sigma2_fixed + float(np.sum(sigma2))) / total

    components = {name: float(sigma2[f]) for f, name in enumerate(problem.factor_names)}
    components["residual"] = float(sigma2_eps)

    return FitResult(
        spec=spec,
        n_obs=problem.n,
        coef_names=problem.coef_names,
        beta=beta,
        se=se,
        df=df,
        t=tvals,
        p=pvals,
        p_normal=p_normal,
        df_fallback=~ok,
        variance_components=components,
        vpc=vpc,
        sigma2_fixed=sigma2_fixed,
        r2_marginal=float(r2_marginal),
        r2_conditional=float(r2_conditional),
        reml_deviance=float(deviance),
        blups=blups,
        residuals=residuals,
        fitted=fitted,
        cov_beta=cov_beta,
        converged=bool(gradient_norm < opts.grad_tol),
        iterations=iterations,
        gradient_norm=gradient_norm,
        boundary_flags=boundary,
        residual_boundary=residual_boundary,
        singular=singular,
        deviance_history=history,
        n_levels={name: problem.sizes[f] for f, name in enumerate(problem.factor_names)},
        _problem=problem,
    )


def r2_and_vpc(fit: FitResult) -> tuple[float, float, dict[str, float]]:
    """Recompute fit-quality summaries from the stored components."""
    sigma2 = [fit.variance_components[f] for f in fit.spec.random]
    sigma2_eps = fit.variance_components["residual"]
    total = fit.sigma2_fixed + sum(sigma2) + sigma2_eps
    random_total = sum(sigma2) + sigma2_eps
    vpc = {f: fit.variance_components[f] / random_total for f in fit.spec.random}
    return fit.sigma2_fixed / total, (fit.sigma2_fixed + sum(sigma2)) / total, vpc


@dataclass
class AblationResult:
    original: FitResult
    ablated: FitResult
    factor: str
    dropped_levels: list[str]
    rows_before: int
    rows_after: int


def ablate_and_refit(
    fit: FitResult,
    table: pd.DataFrame,
    threshold: float = -0.5,
    factor: str | None = None,
    opts: FitOptions | None = None,
) -> AblationResult:
    """Drop all rows in levels whose fitted random effect is below ``threshold``
    and refit the identical specification."""
    spec = fit.spec
    if factor is None:
        factor = spec.random[1] if len(spec.random) > 1 else spec.random[0]
    blups = fit.blups[factor]
    dropped = sorted(str(level) for level, value in blups.items() if value < threshold)

    keep = ~table[factor].astype(str).isin(dropped)
    trimmed = table[keep]
    if trimmed.empty:
        raise DataError(
            f"ablation removed every observation ({len(table)} rows, "
            f"{len(dropped)} levels of {factor!r})"
        )
    for g in spec.random:
        if trimmed[g].nunique() < 2:
            raise DataError(
                f"ablation left grouping factor {g!r} with "
                f"{trimmed[g].nunique()} level(s)"
            )
    refit = fit_reml(trimmed, spec, opts)
    return AblationResult(
        original=fit,
        ablated=refit,
        factor=factor,
        dropped_levels=dropped,
        rows_before=len(table),
        rows_after=len(trimmed),
    )


def exp_growth(beta: float, horizon_years: float) -> float:
    """Multiplicative growth implied by a log-scale slope over a horizon."""
    return math.exp(beta) ** horizon_years


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def summary_table(fit: FitResult) -> str:
    """Human-readable summary mirroring a regression-table layout."""
    lines = []
    lines.append(f"Response: {fit.spec.response}")
    lines.append("-" * 44)
    for i, name in enumerate(fit.coef_names):
        stars = significance_stars(fit.p[i])
        lines.append(f"{name:<28}{fit.beta[i]:>10.3f}{stars}")
        lines.append(f"{'':<28}({fit.se[i]:.3f})")
    lines.append("-" * 44)
    for factor in fit.spec.random:
        lines.append(
            f"Unique {factor} (VPC){'':<8}{fit.n_levels[factor]:>8,} ({fit.vpc[factor]:.2f})"
        )
    lines.append(f"{'Observations':<28}{fit.n_obs:>10,}")
    lines.append("-" * 44)
    lines.append(f"{'Marginal R2':<28}{fit.r2_marginal:>10.2f}")
    lines.append(f"{'Conditional R2':<28}{fit.r2_conditional:>10.2f}")
    lines.append("-" * 44)
    lines.append("Note: *p<0.1; **p<0.05; ***p<0.01")
    return "\n".join(lines)
