"""Regression metrics, rater agreement, and hypothesis tests.

P-values come from the incomplete beta/gamma functions in ``special``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from . import special

_NAN = float("nan")


# -- correlation primitives ---------------------------------------------------

def r_squared(y, fitted):
    y = np.asarray(y, dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - np.asarray(fitted, dtype=float)) ** 2).sum())
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else _NAN
    return 1.0 - ss_res / ss_tot


def pearson_r(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    dx = x - x.mean()
    dy = y - y.mean()
    den = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if den == 0:
        return _NAN
    return max(-1.0, min(1.0, float((dx * dy).sum()) / den))


def correlation_p(r, n):
    """Two-sided p-value of a Pearson r from n pairs, using t with n - 2 df."""
    if not math.isfinite(r) or n < 3:
        return _NAN
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return special.t_two_sided(t, n - 2)


def pearson_with_p(x, y):
    r = pearson_r(x, y)
    return r, correlation_p(r, len(x))


def rankdata(x):
    """Ranks starting at 1 with ties given their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y):
    return pearson_r(rankdata(x), rankdata(y))


def kendall_tau_b(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n != len(y):
        raise ValueError("length mismatch")
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = len(sx)
    ties_x = int((sx == 0).sum())
    ties_y = int((sy == 0).sum())
    den = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if den == 0:
        return _NAN
    return float((sx * sy).sum()) / den


# -- regression metrics -------------------------------------------------------

@dataclass
class MetricReport:
    mae: float
    mse: float
    mape_percent: float
    mape_excluded: int
    pcc: float
    spearman_rho: float
    kendall_tau_b: float
    accuracy_percent: float
    n: int

    def to_dict(self):
        return asdict(self)


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5)


def regression_metrics(pred, truth) -> MetricReport:
    """Seven-metric summary of continuous predictions against integer severities.

    MAPE skips rows with truth 0 and reports how many were skipped. Accuracy compares
    predictions rounded half-up and clamped to [0, 4] with the truth.
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("pred and truth must be 1-D and of equal length")
    if len(p) == 0:
        raise ValueError("empty input")
    err = p - t
    nz = t != 0
    mape = float(np.mean(np.abs(err[nz]) / np.abs(t[nz])) * 100) if nz.any() else _NAN
    classes = np.clip(round_half_up(p), 0, 4)
    return MetricReport(
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err ** 2)),
        mape_percent=mape,
        mape_excluded=int((~nz).sum()),
        pcc=pearson_r(p, t),
        spearman_rho=spearman_rho(p, t),
        kendall_tau_b=kendall_tau_b(p, t),
        accuracy_percent=float(np.mean(classes == t) * 100),
        n=len(p),
    )


# -- agreement ----------------------------------------------------------------

def _mean_squares(Y):
    n, k = Y.shape
    grand = Y.mean()
    ss_rows = k * float(((Y.mean(axis=1) - grand) ** 2).sum())
    ss_cols = n * float(((Y.mean(axis=0) - grand) ** 2).sum())
    ss_tot = float(((Y - grand) ** 2).sum())
    ss_err = ss_tot - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = max(ss_err, 0.0) / ((n - 1) * (k - 1))
    msw = (ss_cols + max(ss_err, 0.0)) / (n * (k - 1))
    return msr, msc, mse, msw


@dataclass
class ICCResult:
    value: float
    ci_low: float
    ci_high: float
    variant: str
    n: int
    k: int

    def to_dict(self):
        return asdict(self)


ICC_VARIANTS = ("ICC(1,1)", "ICC(2,1)", "ICC(3,1)")


def icc(ratings, variant: str = "ICC(2,1)", confidence: float = 0.95) -> ICCResult:
    """Single-rater intraclass correlation with an F-based confidence interval.

    ``ratings`` is an n_videos x k_raters matrix without gaps. ICC(2,1) is the two-way
    random effects, absolute agreement form; ICC(1,1) and ICC(3,1) are the one-way and
    two-way mixed consistency forms.
    """
    Y = np.asarray(ratings, dtype=float)
    if Y.ndim != 2 or not np.all(np.isfinite(Y)):
        raise ValueError("icc needs a complete 2-D rating matrix")
    n, k = Y.shape
    if n < 5 or k < 2:
        raise ValueError("icc needs at least 5 videos and 2 raters")
    if variant not in ICC_VARIANTS:
        raise ValueError(f"unknown ICC variant {variant!r}")
    msr, msc, mse, msw = _mean_squares(Y)
    a = 1.0 - confidence
    if variant == "ICC(1,1)":
        num, den = msr - msw, msr + (k - 1) * msw
        if den == 0:
            return ICCResult(_NAN, _NAN, _NAN, variant, n, k)
        value = num / den
        if msw == 0:
            return ICCResult(value, 1.0, 1.0, variant, n, k)
        f = msr / msw
        df1, df2 = n - 1, n * (k - 1)
        fl = f / special.f_ppf(1 - a / 2, df1, df2)
        fu = f * special.f_ppf(1 - a / 2, df2, df1)
        return ICCResult(value, (fl - 1) / (fl + k - 1), (fu - 1) / (fu + k - 1), variant, n, k)
    if variant == "ICC(3,1)":
        num, den = msr - mse, msr + (k - 1) * mse
        if den == 0:
            return ICCResult(_NAN, _NAN, _NAN, variant, n, k)
        value = num / den
        if mse == 0:
            return ICCResult(value, 1.0, 1.0, variant, n, k)
        f = msr / mse
        df1, df2 = n - 1, (n - 1) * (k - 1)
        fl = f / special.f_ppf(1 - a / 2, df1, df2)
        fu = f * special.f_ppf(1 - a / 2, df2, df1)
        return ICCResult(value, (fl - 1) / (fl + k - 1), (fu - 1) / (fu + k - 1), variant, n, k)
    # ICC(2,1)
    den = msr + (k - 1) * mse + k * (msc - mse) / n
    if den == 0:
        return ICCResult(_NAN, _NAN, _NAN, variant, n, k)
    value = (msr - mse) / den
    if value >= 1.0:
        return ICCResult(value, value, value, variant, n, k)
    # McGraw & Wong (1996) approximate df for the absolute-agreement interval
    aa = k * value / (n * (1 - value))
    bb = 1 + k * value * (n - 1) / (n * (1 - value))
    v = (aa * msc + bb * mse) ** 2 / ((aa * msc) ** 2 / (k - 1) + (bb * mse) ** 2 / ((n - 1) * (k - 1)))
    fl = special.f_ppf(1 - a / 2, n - 1, v)
    fu = special.f_ppf(1 - a / 2, v, n - 1)
    low = n * (msr - fl * mse) / (fl * (k * msc + (k * n - k - n) * mse) + n * msr)
    high = n * (fu * msr - mse) / (k * msc + (k * n - k - n) * mse + n * fu * msr)
    return ICCResult(value, low, high, variant, n, k)


def _ordinal_delta(values, counts):
    # delta^2(c, k) = (sum_{g=c..k} n_g - (n_c + n_k) / 2)^2 over the sorted value scale
    m = len(values)
    cum = np.concatenate([[0.0], np.cumsum(counts)])
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            lo, hi = min(i, j), max(i, j)
            D[i, j] = (cum[hi + 1] - cum[lo] - (counts[i] + counts[j]) / 2.0) ** 2
    return D


def krippendorff_alpha(ratings, metric: str = "ordinal") -> float:
    """Krippendorff's alpha from a units x raters matrix; NaN marks a missing rating.

    Built from the coincidence matrix of pairable values. ``metric`` is one of
    'nominal', 'ordinal', 'interval'.
    """
    R = np.asarray(ratings, dtype=float)
    if R.ndim != 2:
        raise ValueError("ratings must be a units x raters matrix")
    values = np.unique(R[np.isfinite(R)])
    index = {v: i for i, v in enumerate(values)}
    m = len(values)
    coinc = np.zeros((m, m))
    pairable = 0
    for row in R:
        vals = row[np.isfinite(row)]
        mu = len(vals)
        if mu < 2:
            continue
        pairable += 1
        idx = [index[v] for v in vals]
        for a in range(mu):
            for b in range(mu):
                if a != b:
                    coinc[idx[a], idx[b]] += 1.0 / (mu - 1)
    if pairable == 0:
        raise ValueError("no unit has two or more ratings")
    n_c = coinc.sum(axis=1)
    n = n_c.sum()
    if metric == "nominal":
        D = 1.0 - np.eye(m)
    elif metric == "interval":
        D = (values[:, None] - values[None, :]) ** 2
    elif metric == "ordinal":
        D = _ordinal_delta(values, n_c)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    d_obs = float((coinc * D).sum())
    d_exp = float((np.outer(n_c, n_c) * D).sum()) / (n - 1)
    if d_exp == 0:
        return 1.0 if d_obs == 0 else _NAN
    return 1.0 - d_obs / d_exp


def pairwise_agreement(ratings, rater_ids):
    """Exact-agreement percentage and MAE for every rater pair (NaN entries skipped)."""
    R = np.asarray(ratings, dtype=float)
    rows = []
    for i, j in combinations(range(R.shape[1]), 2):
        ok = np.isfinite(R[:, i]) & np.isfinite(R[:, j])
        a, b = R[ok, i], R[ok, j]
        rows.append({"rater_i": rater_ids[i], "rater_j": rater_ids[j], "n": int(ok.sum()),
                     "exact_agreement_percent": float(np.mean(a == b) * 100) if ok.any() else _NAN,
                     "mae": float(np.mean(np.abs(a - b))) if ok.any() else _NAN})
    return rows


# -- hypothesis tests ---------------------------------------------------------

@dataclass
class StatResult:
    statistic: float
    p: float
    df: float

    def __iter__(self):
        return iter((self.statistic, self.p))


def t_test(a, b, kind: str = "welch_two_sample", tails: str = "two") -> StatResult:
    """Welch two-sample or paired t-test.

    ``tails='one'`` tests mean(a) > mean(b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("t_test needs at least 2 observations per sample")
    if kind == "paired":
        if len(a) != len(b):
            raise ValueError("paired t-test needs equal lengths")
        d = a - b
        n = len(d)
        sd = d.std(ddof=1)
        df = n - 1
        if sd == 0:
            if d.mean() == 0:
                return StatResult(0.0, 1.0, df)
            raise ValueError("paired differences have zero variance; t is undefined")
        t = d.mean() / (sd / math.sqrt(n))
    elif kind == "welch_two_sample":
        va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
        if va + vb == 0:
            raise ValueError("both samples have zero variance; t is undefined")
        t = (a.mean() - b.mean()) / math.sqrt(va + vb)
        df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    else:
        raise ValueError(f"unknown t-test kind {kind!r}")
    if tails == "two":
        p = special.t_two_sided(t, df)
    elif tails == "one":
        p = special.t_sf(t, df)
    else:
        raise ValueError("tails must be 'one' or 'two'")
    return StatResult(float(t), float(p), float(df))


def chi_square_independence(table, correction: bool = False) -> StatResult:
    """Pearson chi-square test on a 2x2 contingency table (df = 1)."""
    T = np.asarray(table, dtype=float)
    if T.shape != (2, 2):
        raise ValueError("expected a 2x2 table")
    rows, cols = T.sum(axis=1), T.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("a row or column total is zero")
    E = np.outer(rows, cols) / T.sum()
    diff = np.abs(T - E)
    if correction:
        diff = np.maximum(diff - 0.5, 0.0)
    stat = float((diff ** 2 / E).sum())
    return StatResult(stat, special.chi2_sf(stat, 1), 1.0)


# -- bias analysis ------------------------------------------------------------

def _group_stats(errors):
    e = np.asarray(errors, dtype=float)
    return {"n": int(len(e)), "mean_error": float(e.mean()) if len(e) else _NAN,
            "std_error": float(e.std(ddof=1)) if len(e) > 1 else _NAN}


def subgroup_error_analysis(errors, demographics, quality=None):
    """Per-group prediction error summaries and tests.

    ``errors`` maps video_id -> (participant_id, absolute error); ``demographics`` maps
    participant_id -> ParticipantInfo; ``quality`` optionally maps video_id -> True for
    low-quality (difficult) videos. Each binary grouping (sex, PD status, white vs
    non-white, quality) reports n, mean and std of the error and a Welch two-tailed test
    of the group against its complement. Age is summarized by Pearson r with p.
    """
    vids = sorted(errors)
    rows = []
    for vid in vids:
        pid, err = errors[vid]
        info = demographics.get(pid)
        rows.append((vid, pid, float(err), info))
    report = {"n_videos": len(rows), "groupings": {}, "notes": []}

    def compare(name, key_fn, labels):
        groups = {lab: [] for lab in labels}
        for vid, pid, err, info in rows:
            lab = key_fn(vid, info)
            if lab in groups:
                groups[lab].append(err)
        entry = {lab: _group_stats(v) for lab, v in groups.items()}
        a, b = groups[labels[0]], groups[labels[1]]
        if len(a) < 2 or len(b) < 2:
            report["notes"].append(f"{name}: group with fewer than 2 videos, test skipped")
            entry["test"] = None
        else:
            try:
                res = t_test(a, b, "welch_two_sample", "two")
                entry["test"] = {"kind": "welch_two_sample", "tails": "two",
                                 "t": res.statistic, "df": res.df, "p": res.p}
            except ValueError as exc:
                report["notes"].append(f"{name}: {exc}")
                entry["test"] = None
        report["groupings"][name] = entry

    compare("sex", lambda v, i: i.sex if i else None, ("male", "female"))
    compare("pd_status", lambda v, i: i.pd_status if i else None, ("pd", "control"))

    def race(v, i):
        if i is None or not i.race or i.race.lower() in ("unknown", "no mention", ""):
            return None
        return "white" if i.race.strip().lower() == "white" else "non-white"

    compare("race", race, ("white", "non-white"))
    if quality is not None:
        compare("quality", lambda v, i: ("low" if quality.get(v) else "high") if v in quality else None,
                ("high", "low"))
    ages = [(i.age, err) for _, _, err, i in rows if i is not None and i.age is not None]
    if len(ages) >= 3:
        x, y = zip(*ages)
        r, p = pearson_with_p(x, y)
        report["groupings"]["age"] = {"n": len(ages), "pearson_r": r, "p": p}
    else:
        report["notes"].append("age: fewer than 3 videos with a known age")
        report["groupings"]["age"] = None
    return report


def quality_agreement_analysis(ratings_matrix, difficult, icc_variant="ICC(2,1)"):
    """Rater agreement split by video quality.

    ``ratings_matrix`` is videos x experts; ``difficult`` flags low-quality videos.
    Reports ICC per quality group and a chi-square test of independence between
    majority agreement (at least two experts equal) and quality.
    """
    R = np.asarray(ratings_matrix, dtype=float)
    low = np.asarray(difficult, dtype=bool)
    out = {}
    for name, mask in (("high", ~low), ("low", low)):
        try:
            out[f"icc_{name}"] = icc(R[mask], icc_variant).to_dict()
        except ValueError as exc:
            out[f"icc_{name}"] = {"error": str(exc)}
    majority = np.array([len(set(row.tolist())) < R.shape[1] for row in R])
    table = [[int(np.sum(majority & ~low)), int(np.sum(~majority & ~low))],
             [int(np.sum(majority & low)), int(np.sum(~majority & low))]]
    out["majority_vs_quality_table"] = table
    try:
        res = chi_square_independence(table)
        out["chi_square"] = {"statistic": res.statistic, "p": res.p, "df": 1}
    except ValueError as exc:
        out["chi_square"] = {"error": str(exc)}
    return out
