"""Plot-ready diagnostic tables for a fitted model.

No rendering happens here; every member of the bundle is a plain table that
external plotting can consume. QQ tables use the (k - 0.5)/n plotting
position and standardize the empirical values by their own mean and sample
standard deviation, so a well-specified fit tracks the identity line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
import scipy.stats

from .lmm import FitResult


@dataclass
class DiagnosticsBundle:
    residual_vs_fitted: pd.DataFrame
    residual_qq: pd.DataFrame
    blup_qq: dict[str, pd.DataFrame]
    obs_per_group: dict[str, pd.DataFrame]
    activity_scatter: pd.DataFrame
    time_scatter: pd.DataFrame

    def tables(self) -> Mapping[str, pd.DataFrame]:
        out = {
            "residual_vs_fitted": self.residual_vs_fitted,
            "residual_qq": self.residual_qq,
            "activity_scatter": self.activity_scatter,
            "time_scatter": self.time_scatter,
        }
        for factor, df in self.blup_qq.items():
            out[f"blup_qq_{factor}"] = df
        for factor, df in self.obs_per_group.items():
            out[f"obs_per_group_{factor}"] = df
        return out


def qq_table(values: np.ndarray) -> pd.DataFrame:
    """Sorted values against standard-normal quantiles at (k - 0.5)/n."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    probs = (np.arange(1, n + 1) - 0.5) / n
    theoretical = scipy.stats.norm.ppf(probs)
    spread = x.std(ddof=1) if n > 1 else 1.0
    standardized = (x - x.mean()) / (spread if spread > 0 else 1.0)
    return pd.DataFrame(
        {
            "prob": probs,
            "theoretical_q": theoretical,
            "sample_q": x,
            "standardized_q": standardized,
        }
    )


def diagnostics(fit: FitResult, table: pd.DataFrame) -> DiagnosticsBundle:
    """Assemble the assumption-check tables for a converged fit."""
    if len(table) != fit.n_obs:
        raise ValueError(
            f"table has {len(table)} rows but the fit used {fit.n_obs} observations"
        )

    residual_vs_fitted = pd.DataFrame(
        {"fitted": fit.fitted, "residual": fit.residuals}
    )
    residual_qq = qq_table(fit.residuals)
    blup_qq = {factor: qq_table(series.to_numpy()) for factor, series in fit.blups.items()}

    obs_per_group = {}
    for factor in fit.spec.random:
        counts = table[factor].astype(str).value_counts().sort_index()
        obs_per_group[factor] = pd.DataFrame(
            {"level": counts.index, "n_obs": counts.to_numpy()}
        )

    activity_scatter = pd.DataFrame(
        {
            "log_activity": table["log_activity"].to_numpy()
            if "log_activity" in table
            else np.full(len(table), np.nan),
            "log_value": table[fit.spec.response].to_numpy(),
        }
    )

    time_line = partial_effect(
        fit, "time_years", np.asarray(table["time_years"], dtype=float)
    )
    time_scatter = pd.DataFrame(
        {
            "time_years": table["time_years"].to_numpy(),
            "log_value": table[fit.spec.response].to_numpy(),
            "partial_fit": time_line["fit"].to_numpy(),
        }
    )

    return DiagnosticsBundle(
        residual_vs_fitted=residual_vs_fitted,
        residual_qq=residual_qq,
        blup_qq=blup_qq,
        obs_per_group=obs_per_group,
        activity_scatter=activity_scatter,
        time_scatter=time_scatter,
    )


def partial_effect(
    fit: FitResult,
    predictor: str,
    grid: np.ndarray,
    exponentiate: bool = False,
    level: float = 0.95,
) -> pd.DataFrame:
    """Fitted response along one predictor, others at their fitted means.

    Random effects are set to zero; the interval comes from the fixed-effect
    covariance. With ``exponentiate`` the line and interval are mapped back
    to the response scale by ``exp``.
    """
    if predictor not in fit.spec.fixed:
        raise ValueError(f"unknown predictor {predictor!r}; model has {fit.spec.fixed}")
    problem = fit._problem
    if problem is None:
        raise ValueError("fit does not carry design internals")

    grid = np.asarray(grid, dtype=float)
    means = problem.x.mean(axis=0)
    design = np.tile(means, (len(grid), 1))
    col = 1 + fit.spec.fixed.index(predictor)
    design[:, col] = grid

    linpred = design @ fit.beta
    var = np.einsum("ij,jk,ik->i", design, fit.cov_beta, design)
    z = scipy.stats.norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(var)
    fit_line, lower, upper = linpred, linpred - half, linpred + half
    if exponentiate:
        fit_line, lower, upper = np.exp(fit_line), np.exp(lower), np.exp(upper)
    return pd.DataFrame(
        {"grid": grid, "fit": fit_line, "lower": lower, "upper": upper}
    )


def write_bundle(
    bundle: DiagnosticsBundle,
    out_dir: str | Path,
    partial: pd.DataFrame | None = None,
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for name, df in bundle.tables().items():
        path = out / f"{name}.csv"
        df.to_csv(path, index=False)
        written[name] = path
    if partial is not None:
        path = out / "partial_effect_time_years.csv"
        partial.to_csv(path, index=False)
        written["partial_effect_time_years"] = path
    manifest = {
        "tables": {name: str(path.name) for name, path in written.items()},
        "rows": {name: int(len(pd.read_csv(path))) for name, path in written.items()},
    }
    manifest_path = out / "report_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    written["manifest"] = manifest_path
    return written
