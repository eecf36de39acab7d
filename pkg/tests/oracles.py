"""Independent dense-matrix references used to check the production fitter.

Everything here works on explicit n-by-n covariance matrices and shares no
code with the sparse profiled-REML path it validates.
"""

from __future__ import annotations

import numpy as np


def indicator(codes: np.ndarray, n_levels: int) -> np.ndarray:
    z = np.zeros((len(codes), n_levels))
    z[np.arange(len(codes)), codes] = 1.0
    return z


def dense_reml(
    y: np.ndarray,
    x: np.ndarray,
    code_sets: list[np.ndarray],
    sigma2s: list[float],
    sigma2_eps: float,
) -> dict:
    """REML deviance, GLS fixed effects, and BLUPs from the full covariance.

    V = sigma2_eps I + sum_g sigma2_g Z_g Z_g', evaluated with dense algebra:
    deviance = log|V| + log|X'V^-1 X| + r'V^-1 r + (n - p) log 2 pi.
    """
    n, p = x.shape
    v = sigma2_eps * np.eye(n)
    zs = []
    for codes, s2 in zip(code_sets, sigma2s):
        z = indicator(np.asarray(codes), int(np.max(codes)) + 1)
        zs.append(z)
        v += s2 * (z @ z.T)

    vinv = np.linalg.inv(v)
    a = x.T @ vinv @ x
    beta = np.linalg.solve(a, x.T @ vinv @ y)
    resid = y - x @ beta
    quad = float(resid @ vinv @ resid)

    sign_v, logdet_v = np.linalg.slogdet(v)
    sign_a, logdet_a = np.linalg.slogdet(a)
    assert sign_v > 0 and sign_a > 0
    deviance = logdet_v + logdet_a + quad + (n - p) * np.log(2 * np.pi)

    blups = [s2 * z.T @ vinv @ resid for z, s2 in zip(zs, sigma2s)]
    var_beta = np.linalg.inv(a)
    return {
        "deviance": float(deviance),
        "beta": beta,
        "blups": blups,
        "var_beta": var_beta,
    }


def one_way_anova_intercept_df(y: np.ndarray, codes: np.ndarray) -> float:
    """Classical df for the grand mean in a balanced one-way random design.

    The grand mean's variance estimate is MSA / (a * m), a multiple of the
    between-group mean square, so its Satterthwaite df is exactly a - 1.
    """
    a = int(np.max(codes)) + 1
    return float(a - 1)
