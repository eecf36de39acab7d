"""Synthetic rating corpora and regression tables with known ground truth.

Two generators:

* ``generate_regression_data`` draws directly from the crossed
  random-intercepts growth model, for fitter recovery checks.

* ``generate_ratings`` emits rating/metadata files in the exact ingest
  formats, with planted preference-change episodes. Every user rates a few
  "background" categories at constant per-quarter mass, so their averaged
  threshold band is flat when nothing is changing; an episode is a burst
  quarter far above the band, a dwell of mid-band quarters whose total mass
  carries a configurable per-year multiplicative drift, and a final single
  one-star rating far below the band. Items are single-category and unique
  per rating, so category relevance is exactly one and the quarterly
  preference mass equals the planned rating sums.

Ground truth is computed by a direct quadratic reference in this module
(backward scan per below-band point), sharing no code with the streaming
event scanner it validates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from . import tableio
from .quarters import Quarter

#: background categories per user: fixed items-per-quarter, always 4 stars.
BG_ITEMS = (2, 3, 4)
BG_RATING = 4
PEAK_ITEMS = 7
PEAK_RATING = 5
CLOSE_RATING = 1
DWELL_ITEMS = 3
DWELL_MIN, DWELL_MAX = 8.0, 15.0
MAX_DWELL_QUARTERS = 7


@dataclass
class SynthConfig:
    seed: int = 0
    n_users: int = 200
    n_categories: int = 12
    episodes_per_user: int = 1
    start_year: int = 1999
    years: int = 19
    warmup_quarters: int = 4
    drift_per_year: float = 0.0
    dwell_base: float = 8.8
    dwell_noise: float = 0.06
    user_sigma: float = 0.15
    cat_sigma: float = 0.15
    fmt: str = "csv"
    gzip: bool = False
    # direct regression-table generator
    reg_n_events: int = 3000
    reg_n_users: int = 300
    reg_n_categories: int = 30
    reg_beta: tuple[float, float, float] = (0.300, 0.018, 0.613)
    reg_sigma_user: float = 0.5
    reg_sigma_cat: float = 0.6
    reg_sigma_eps: float = 0.4
    reg_activity_mu: float = 2.0
    reg_activity_sigma: float = 0.7
    reg_years: float = 20.0
    reg_center_effects: bool = True

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.n_categories < 1:
            raise ValueError("counts must be >= 1")
        if self.drift_per_year < 0:
            raise ValueError("drift knob must be >= 0")
        if self.n_categories < len(BG_ITEMS) + self.episodes_per_user:
            raise ValueError(
                "need at least "
                f"{len(BG_ITEMS) + self.episodes_per_user} categories "
                "(backgrounds plus one per episode)"
            )


# ---------------------------------------------------------------------------
# Quadratic ground-truth reference


def brute_force_events(
    quarters: np.ndarray,
    values: np.ndarray,
    upper: Mapping[int, float],
    lower: Mapping[int, float],
) -> list[tuple[int, int, float]]:
    """Direct quadratic scan: for every below-band point walk backwards.

    Walking back from a below point: strictly-between points accumulate,
    another below point (or running out of points) kills the candidate, an
    above point anchors the episode. Ties and quarters without a band are
    transparent. Returns (open_quarter, close_quarter, value) triples with
    strictly positive values, in close order.
    """
    events = []
    n = len(quarters)
    for b in range(n):
        qb = int(quarters[b])
        if qb not in lower:
            continue
        if not values[b] < lower[qb]:
            continue
        total = 0.0
        anchor = None
        for a in range(b - 1, -1, -1):
            qa = int(quarters[a])
            if qa not in lower:
                continue
            x, y = upper[qa], lower[qa]
            c = values[a]
            if c > x:
                anchor = qa
                break
            if c < y:
                break
            if y < c < x:
                total += float(c)
        if anchor is not None and total > 0.0:
            events.append((anchor, qb, total))
    return events


def reference_thresholds(
    cat_series: Mapping[str, tuple[np.ndarray, np.ndarray]],
    window_quarters: int,
    min_window_points: int = 2,
    sigma_mult: float = 2.0,
) -> tuple[dict[int, float], dict[int, float]]:
    """Per-quarter averaged band recomputed point by point (no vectorized reuse)."""
    lo = min(int(q[0]) for q, _ in cat_series.values())
    hi = max(int(q[-1]) for q, _ in cat_series.values())
    upper: dict[int, float] = {}
    lower: dict[int, float] = {}
    for t in range(lo, hi + 1):
        xs, ys = [], []
        for cat in sorted(cat_series):
            q, c = cat_series[cat]
            inside = [float(c[i]) for i in range(len(q)) if t - window_quarters < q[i] <= t]
            if len(inside) < min_window_points:
                continue
            arr = np.array(inside)
            mean = float(np.mean(arr))
            spread = sigma_mult * float(np.std(arr, ddof=1))
            xs.append(mean + spread)
            ys.append(mean - spread)
        if xs:
            upper[t] = float(np.mean(np.array(xs)))
            lower[t] = float(np.mean(np.array(ys)))
    return upper, lower


# ---------------------------------------------------------------------------
# Regression-table generator


def generate_regression_data(
    cfg: SynthConfig, rng: np.random.Generator | None = None
) -> tuple[pd.DataFrame, dict]:
    """Draw an analysis table from the crossed-intercepts growth model."""
    if cfg.reg_n_users < 2 or cfg.reg_n_categories < 2:
        raise ValueError("grouping factors need at least 2 levels each")
    rng = rng or np.random.default_rng(cfg.seed)
    n = cfg.reg_n_events
    users = rng.integers(0, cfg.reg_n_users, n)
    cats = rng.integers(0, cfg.reg_n_categories, n)
    time_years = rng.uniform(0.0, cfg.reg_years, n)
    log_activity = rng.normal(cfg.reg_activity_mu, cfg.reg_activity_sigma, n)

    b_user = rng.normal(0.0, cfg.reg_sigma_user, cfg.reg_n_users)
    b_cat = rng.normal(0.0, cfg.reg_sigma_cat, cfg.reg_n_categories)
    if cfg.reg_center_effects:
        if cfg.reg_sigma_user > 0:
            b_user -= b_user.mean()
        if cfg.reg_sigma_cat > 0:
            b_cat -= b_cat.mean()
    noise = rng.normal(0.0, cfg.reg_sigma_eps, n) if cfg.reg_sigma_eps > 0 else np.zeros(n)

    beta0, beta1, beta2 = cfg.reg_beta
    y = beta0 + beta1 * time_years + beta2 * log_activity + b_user[users] + b_cat[cats] + noise

    table = pd.DataFrame(
        {
            "user_id": [f"u{i:05d}" for i in users],
            "category": [f"c{i:04d}" for i in cats],
            "time_years": time_years,
            "log_value": y,
            "log_activity": log_activity,
        }
    )
    truth = {
        "beta": list(cfg.reg_beta),
        "sigma_user": cfg.reg_sigma_user,
        "sigma_cat": cfg.reg_sigma_cat,
        "sigma_eps": cfg.reg_sigma_eps,
        "b_user": b_user,
        "b_cat": b_cat,
    }
    return table, truth


# ---------------------------------------------------------------------------
# Rating-corpus generator


@dataclass
class _Episode:
    user_idx: int
    category: str
    peak_q: int
    dwell: list[int]  # per-quarter dwell masses (integers)
    close_q: int


@dataclass
class SynthOutput:
    ratings_path: Path
    meta_path: Path
    truth_path: Path
    truth_events: pd.DataFrame
    params: dict
    warnings: list[str] = field(default_factory=list)
    counts: dict = field(default_factory=dict)


def _split_dwell(total: int) -> tuple[int, int, int]:
    """Three ratings in 1..5 summing to ``total`` (7 <= total <= 15)."""
    r3 = max(1, total - 10)
    r2 = max(1, min(5, total - 5 - r3))
    r1 = total - r2 - r3
    assert 1 <= r1 <= 5, total
    return r1, r2, r3


def _plan_user(
    user_idx: int,
    cfg: SynthConfig,
    rng: np.random.Generator,
    categories: list[str],
) -> tuple[list[tuple[int, str, int, int]], list[_Episode]]:
    """Plan one user's ratings: (quarter, category, rating, n_items) bursts.

    Returns the rating plan plus the planted episodes.
    """
    total_quarters = cfg.years * 4
    picks = rng.choice(len(categories), size=len(BG_ITEMS) + cfg.episodes_per_user, replace=False)
    bg_cats = [categories[i] for i in picks[: len(BG_ITEMS)]]
    episode_cats = [categories[i] for i in picks[len(BG_ITEMS) :]]

    # Active span: long enough for warmup plus every episode.
    per_episode = MAX_DWELL_QUARTERS + 3
    span = cfg.warmup_quarters + cfg.episodes_per_user * (per_episode + 2) + 2
    span = min(span, total_quarters)
    start = int(rng.integers(0, max(1, total_quarters - span + 1)))
    quarters = list(range(start, start + span))

    plan: list[tuple[int, str, int, int]] = []
    for q in quarters:
        for cat, n_items in zip(bg_cats, BG_ITEMS):
            plan.append((q, cat, BG_RATING, n_items))

    b_user = rng.normal(0.0, cfg.user_sigma)
    episodes: list[_Episode] = []
    cursor = start + cfg.warmup_quarters
    for cat in episode_cats:
        latent = rng.uniform(1.0, 8.0) * math.exp(b_user + rng.normal(0.0, cfg.cat_sigma))
        n_dwell = int(np.clip(latent, 1.0, float(MAX_DWELL_QUARTERS)))
        peak_q = cursor
        close_q = peak_q + n_dwell + 1
        if close_q > start + span - 1:
            break
        mid_years = (peak_q + close_q) / 2.0 / 4.0
        dwell_bar = cfg.dwell_base * (1.0 + cfg.drift_per_year) ** mid_years
        dwell_bar *= math.exp(rng.normal(0.0, cfg.dwell_noise))
        dwell_bar = float(np.clip(dwell_bar, DWELL_MIN, DWELL_MAX))
        total = int(round(dwell_bar * n_dwell))
        base, extra = divmod(total, n_dwell)
        dwell = [base + (1 if i < extra else 0) for i in range(n_dwell)]

        plan.append((peak_q, cat, PEAK_RATING, PEAK_ITEMS))
        for i, mass in enumerate(dwell):
            r1, r2, r3 = _split_dwell(mass)
            for r in (r1, r2, r3):
                plan.append((peak_q + 1 + i, cat, r, 1))
        plan.append((close_q, cat, CLOSE_RATING, 1))
        episodes.append(_Episode(user_idx, cat, peak_q, dwell, close_q))
        cursor = close_q + 2
    return plan, episodes


def _quarter_timestamp(q_index: int, offset: int) -> int:
    from datetime import datetime, timezone

    quarter = Quarter.from_index(q_index)
    month = (quarter.quarter - 1) * 3 + 1
    base = int(datetime(quarter.year, month, 1, tzinfo=timezone.utc).timestamp())
    return base + offset * 3600


def generate_ratings(cfg: SynthConfig, out_dir: str | Path) -> SynthOutput:
    """Write rating and metadata files plus the reference ground truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    categories = [f"cat{i:03d}" for i in range(cfg.n_categories)]

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_users)
    plans = []
    all_episodes: list[_Episode] = []
    for u in range(cfg.n_users):
        plan, episodes = _plan_user(u, cfg, np.random.default_rng(children[u]), categories)
        plans.append(plan)
        all_episodes.extend(episodes)

    suffix = ".gz" if cfg.gzip else ""
    ext = "jsonl" if cfg.fmt == "jsonl" else "csv"
    ratings_path = out / f"ratings.{ext}{suffix}"
    meta_path = out / f"meta.{ext}{suffix}"

    n_ratings = 0
    category_items: dict[str, int] = {c: 0 for c in categories}
    user_quarter_counts: list[dict[int, int]] = []
    user_cat_quarter: list[dict[tuple[str, int], int]] = []

    with _open_out(ratings_path, cfg.gzip) as rfh, _open_out(meta_path, cfg.gzip) as mfh:
        if cfg.fmt == "csv":
            rfh.write("user,item,rating,time\n")
            mfh.write("item,categories\n")
        for u, plan in enumerate(plans):
            user = f"user{u:05d}"
            seq = 0
            q_counts: dict[int, int] = {}
            cq_mass: dict[tuple[str, int], int] = {}
            for q, cat, rating, n_items in sorted(plan):
                for _ in range(n_items):
                    item = f"b{u:05d}x{seq:05d}"
                    ts = _quarter_timestamp(q, seq % 2000)
                    if cfg.fmt == "jsonl":
                        rfh.write(
                            json.dumps(
                                {"user": user, "item": item, "rating": rating, "time": ts}
                            )
                            + "\n"
                        )
                        mfh.write(json.dumps({"item": item, "categories": [cat]}) + "\n")
                    else:
                        rfh.write(f"{user},{item},{rating},{ts}\n")
                        mfh.write(f"{item},{cat}\n")
                    seq += 1
                    n_ratings += 1
                    category_items[cat] += 1
                    q_counts[q] = q_counts.get(q, 0) + 1
                    cq_mass[(cat, q)] = cq_mass.get((cat, q), 0) + rating
            user_quarter_counts.append(q_counts)
            user_cat_quarter.append(cq_mass)

    truth_events = _reference_truth(cfg, user_quarter_counts, user_cat_quarter)
    truth_path = out / "truth_events.csv"
    truth_events.to_csv(truth_path, index=False)

    warnings = []
    min_user_ratings = min(sum(qc.values()) for qc in user_quarter_counts)
    if min_user_ratings <= 20:
        warnings.append(
            f"some users have only {min_user_ratings} ratings; the default "
            "population filter (more than 20) would drop them"
        )
    thin = {c: n for c, n in category_items.items() if 0 < n <= 100}
    if thin:
        warnings.append(
            f"{len(thin)} categories have <= 100 items; the default category "
            f"filter would remove them: {sorted(thin)[:5]}"
        )

    params = {
        "seed": cfg.seed,
        "drift_per_year": cfg.drift_per_year,
        "expected_time_slope": math.log1p(cfg.drift_per_year),
        "n_users": cfg.n_users,
        "n_categories": cfg.n_categories,
        "n_ratings": n_ratings,
        "n_planted_episodes": len(all_episodes),
    }
    (out / "truth_params.json").write_text(json.dumps(params, indent=2, sort_keys=True))
    return SynthOutput(
        ratings_path=ratings_path,
        meta_path=meta_path,
        truth_path=truth_path,
        truth_events=truth_events,
        params=params,
        warnings=warnings,
        counts={"ratings": n_ratings, "category_items": category_items},
    )


def _open_out(path: Path, use_gzip: bool):
    import io

    if use_gzip:
        return io.TextIOWrapper(tableio.open_gzip_deterministic(path), encoding="utf-8")
    return open(path, "w", encoding="utf-8")


def _reference_truth(
    cfg: SynthConfig,
    user_quarter_counts: list[dict[int, int]],
    user_cat_quarter: list[dict[tuple[str, int], int]],
    window_quarters: int = 8,
) -> pd.DataFrame:
    """Recompute expected events directly from the planned rating masses."""
    rows = []
    for u, cq_mass in enumerate(user_cat_quarter):
        series: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        by_cat: dict[str, list[tuple[int, int]]] = {}
        for (cat, q), mass in cq_mass.items():
            by_cat.setdefault(cat, []).append((q, mass))
        for cat, pts in by_cat.items():
            pts.sort()
            series[cat] = (
                np.array([p[0] for p in pts], dtype=np.int64),
                np.array([float(p[1]) for p in pts]),
            )
        upper, lower = reference_thresholds(series, window_quarters)
        q_counts = user_quarter_counts[u]
        for cat in sorted(series):
            q_arr, c_arr = series[cat]
            for open_q, close_q, value in brute_force_events(q_arr, c_arr, upper, lower):
                activity = sum(
                    q_counts.get(q, 0) for q in range(open_q + 1, close_q + 1)
                )
                t_x = Quarter.from_index(open_q)
                t_y = Quarter.from_index(close_q)
                rows.append(
                    {
                        "user_id": f"user{u:05d}",
                        "category": cat,
                        "t_x": str(t_x),
                        "t_y": str(t_y),
                        "value": value,
                        "activity": activity,
                        "time_years": (open_q + close_q) / 2.0 / 4.0,
                    }
                )
    columns = ["user_id", "category", "t_x", "t_y", "value", "activity", "time_years"]
    frame = pd.DataFrame(rows, columns=columns)
    return frame.sort_values(["user_id", "category", "t_y"], kind="stable").reset_index(
        drop=True
    )
