"""Reliability, agreement and MCMC trace diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import f as f_dist

from .convergence import split_rhat
from .data import ScoreDataset, ValidationError

__all__ = [
    "IccResult",
    "icc",
    "bland_altman",
    "trace_export",
    "write_draw_dump",
    "read_draw_dump",
    "assessor_effects",
    "diagnostics_report",
]

ICC_VARIANTS = ("one-way", "two-way-consistency", "two-way-agreement")


@dataclass(frozen=True)
class IccResult:
    icc: float
    ci_lower: float
    ci_upper: float
    variant: str
    n_proposals: int
    n_raters: float          # harmonic mean ratings per proposal (one-way)
    degenerate: bool = False
    missing_fraction: float = 0.0

    @property
    def many_missing(self) -> bool:
        return self.missing_fraction > 0.10


def _one_way(ds: ScoreDataset, level: float):
    y = np.asarray(ds.scores, dtype=float)
    g = ds.proposal_index
    n = ds.n_proposals
    counts = np.bincount(g, minlength=n).astype(float)
    means = np.bincount(g, weights=y, minlength=n) / counts
    grand = y.mean()
    n_obs = y.size
    df_b, df_w = n - 1, n_obs - n
    if df_w <= 0:
        raise ValidationError("one-way ICC needs at least one proposal with two scores")
    msb = np.sum(counts * (means - grand) ** 2) / df_b
    msw = np.sum((y - means[g]) ** 2) / df_w
    k = n / np.sum(1.0 / counts)     # harmonic mean group size
    if msb == 0:
        return 0.0, 0.0, 0.0, k, True
    if msw == 0:
        return 1.0, 1.0, 1.0, k, False
    value = (msb - msw) / (msb + (k - 1) * msw)
    F = msb / msw
    q = 1 - (1 - level) / 2
    fl = F / f_dist.ppf(q, df_b, df_w)
    fu = F * f_dist.ppf(q, df_w, df_b)
    return value, (fl - 1) / (fl + k - 1), (fu - 1) / (fu + k - 1), k, False


def _two_way(ds: ScoreDataset, agreement: bool, level: float):
    mat = ds.score_matrix()
    rows = mat[~np.isnan(mat).any(axis=1)]
    n, k = rows.shape
    if n < 2 or k < 2:
        raise ValidationError("two-way ICC needs at least 2 proposals scored by every assessor")
    grand = rows.mean()
    ss_r = k * np.sum((rows.mean(axis=1) - grand) ** 2)
    ss_c = n * np.sum((rows.mean(axis=0) - grand) ** 2)
    ss_e = np.sum((rows - grand) ** 2) - ss_r - ss_c
    msr = ss_r / (n - 1)
    msc = ss_c / (k - 1)
    df_e = (n - 1) * (k - 1)
    mse = ss_e / df_e
    if msr == 0:
        return 0.0, 0.0, 0.0, float(k), True, n
    if mse <= 1e-14 * msr and not (agreement and msc > 0):
        return 1.0, 1.0, 1.0, float(k), False, n
    q = 1 - (1 - level) / 2
    if not agreement:
        value = (msr - mse) / (msr + (k - 1) * mse)
        F = msr / mse
        fl = F / f_dist.ppf(q, n - 1, df_e)
        fu = F * f_dist.ppf(q, df_e, n - 1)
        return value, (fl - 1) / (fl + k - 1), (fu - 1) / (fu + k - 1), float(k), False, n
    value = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)
    # McGraw-Wong interval with Satterthwaite degrees of freedom
    a = k * value / (n * (1 - value))
    b = 1 + k * value * (n - 1) / (n * (1 - value))
    v = (a * msc + b * mse) ** 2 / ((a * msc) ** 2 / (k - 1) + (b * mse) ** 2 / df_e)
    fs = f_dist.ppf(q, n - 1, v)
    fi = f_dist.ppf(q, v, n - 1)
    lo = n * (msr - fs * mse) / (fs * (k * msc + (k * n - k - n) * mse) + n * msr)
    hi = n * (fi * msr - mse) / (k * msc + (k * n - k - n) * mse + n * fi * msr)
    return value, lo, hi, float(k), False, n


def icc(ds: ScoreDataset, variant: str = "one-way", level: float = 0.95) -> IccResult:
    """Single-rater intraclass correlation with an F-based confidence interval.

    Parameters
    ----------
    variant : {"one-way", "two-way-consistency", "two-way-agreement"}
        ``one-way`` uses all scores, with the harmonic mean number of
        ratings per proposal standing in for k. The two-way forms use only
        proposals scored by every assessor.
    """
    if variant not in ICC_VARIANTS:
        raise ValueError(f"variant must be one of {ICC_VARIANTS}")
    if ds.n_proposals < 2 or ds.n_assessors < 2:
        raise ValidationError("ICC needs at least 2 proposals and 2 assessors")
    missing = 1.0 - ds.n_obs / (ds.n_proposals * ds.n_assessors)
    if variant == "one-way":
        v, lo, hi, k, deg = _one_way(ds, level)
        n = ds.n_proposals
    else:
        v, lo, hi, k, deg, n = _two_way(ds, variant == "two-way-agreement", level)
    return IccResult(float(v), float(min(lo, v)), float(max(hi, v)), variant, n, float(k),
                     deg, float(missing))


def bland_altman(a, b):
    """Mean difference and 95% limits of agreement of two rankings.

    Returns
    -------
    mean_difference, lower_limit, upper_limit, differences
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("rankings must cover the same proposals")
    d = a - b
    m = float(d.mean())
    s = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return m, m - 1.96 * s, m + 1.96 * s, d


def _iterations(draws) -> np.ndarray:
    c = draws.mcmc
    return c.n_adapt + c.n_burnin + c.thin * np.arange(draws.n_draws) + 1


def trace_export(draws, name: str) -> np.ndarray:
    """Long-format trace of one parameter.

    Returns
    -------
    structured array with fields chain, iteration, value
    """
    values = draws.parameter(name)
    c, n = values.shape
    out = np.empty(c * n, dtype=[("chain", "i8"), ("iteration", "i8"), ("value", "f8")])
    out["chain"] = np.repeat(np.arange(1, c + 1), n)
    out["iteration"] = np.tile(_iterations(draws), c)
    out["value"] = values.ravel()
    return out


def write_draw_dump(draws, path) -> None:
    """One row per retained draw: chain, iteration, every theta, the SDs."""
    names = ([f"theta[{p}]" for p in draws.proposal_ids]
             + [k for k in draws.scalars if np.isfinite(draws.scalars[k]).all()])
    cols = [draws.parameter(n) for n in names]
    its = _iterations(draws)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration"] + names)
        for c in range(draws.n_chains):
            for d in range(draws.n_draws):
                w.writerow([c + 1, int(its[d])] + [repr(float(a[c, d])) for a in cols])


def read_draw_dump(path) -> dict[str, np.ndarray]:
    """Parameter name -> (n_chains, n_draws) array from a draw dump."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader])
    chain = rows[:, 0].astype(int)
    ids = np.unique(chain)
    per = [rows[chain == c] for c in ids]
    n = min(len(p) for p in per)
    return {name: np.stack([p[:n, j] for p in per])
            for j, name in enumerate(header) if j >= 2}


def assessor_effects(draws, probs=(0.05, 0.5, 0.95)) -> list[dict]:
    """Posterior mean and quantiles of each assessor effect."""
    out = []
    flat = draws.nu.reshape(-1, draws.nu.shape[2])
    q = np.quantile(flat, probs, axis=0)
    for j, a in enumerate(draws.assessor_ids):
        row = {"assessor": a, "mean": float(flat[:, j].mean())}
        row.update({f"q{p:g}": float(q[i, j]) for i, p in enumerate(probs)})
        out.append(row)
    return out


def rhat_table(traces: dict[str, np.ndarray]) -> dict[str, tuple[float, bool]]:
    return {k: split_rhat(v) for k, v in traces.items()}


def diagnostics_report(icc_results: dict | None = None, rhats: dict | None = None,
                       tie_count: int | None = None, warnings: list | None = None,
                       assessors: list | None = None, notices: list | None = None) -> str:
    """Plain-text report; every section is optional."""
    lines = []
    if icc_results:
        lines.append("# intraclass correlation (95% CI)")
        for panel, r in icc_results.items():
            flag = ""
            if r.degenerate:
                flag += " [degenerate]"
            if r.many_missing:
                flag += f" [{100 * r.missing_fraction:.0f}% cells missing]"
            lines.append(f"{panel}\t{r.variant}\t{r.icc:.3f}\t({r.ci_lower:.3f}; "
                         f"{r.ci_upper:.3f}){flag}")
        lines.append("")
    if notices:
        lines.append("# notices")
        lines.extend(notices)
        lines.append("")
    if rhats:
        lines.append("# split R-hat")
        for name, v in rhats.items():
            r, deg = v if isinstance(v, tuple) else (v, False)
            lines.append(f"{name}\t{r:.4f}" + ("\t[degenerate]" if deg else ""))
        worst = max(rhats, key=lambda k: rhats[k][0] if isinstance(rhats[k], tuple)
                    else rhats[k])
        lines.append(f"max\t{worst}")
        lines.append("")
    if assessors:
        keys = [k for k in assessors[0] if k != "assessor"]
        lines.append("# assessor effects")
        lines.append("assessor\t" + "\t".join(keys))
        for row in assessors:
            lines.append(f"{row['assessor']}\t" + "\t".join(f"{row[k]:.4f}" for k in keys))
        lines.append("")
    if tie_count is not None:
        lines.append(f"# draws with tied theta: {tie_count}")
        lines.append("")
    if warnings:
        lines.append("# warnings")
        lines.extend(warnings)
        lines.append("")
    return "\n".join(lines)
