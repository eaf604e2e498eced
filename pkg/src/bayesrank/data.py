"""Score data, run configuration, and their file formats.

Scores live in long format, one row per (proposal, assessor) pair that was
actually scored. A missing score (conflict of interest, absence) is simply a
missing row; nothing downstream ever sees a sentinel value.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "ScoreRecord",
    "ScoreDataset",
    "ModelConfig",
    "PriorConfig",
    "McmcConfig",
    "load_scores",
    "write_scores",
    "grand_mean",
    "load_config",
    "dataset_from_matrix",
]


class ValidationError(ValueError):
    """Input data or configuration violates a documented constraint."""


@dataclass(frozen=True)
class ScoreRecord:
    proposal_id: str
    assessor_id: str
    score: float
    panel_id: str | None = None


def _sort_labels(labels: Iterable[str]) -> list[str]:
    # numeric identifiers sort numerically so that "10" follows "9"
    labels = set(labels)
    try:
        return sorted(labels, key=lambda s: (float(s), s))
    except ValueError:
        return sorted(labels)


@dataclass(frozen=True, eq=False)
class ScoreDataset:
    """Validated collection of panel scores.

    Identifiers are mapped to dense zero-based indices in sorted order, so
    index order doubles as the deterministic identifier tie-break used by the
    ranking code. The per-observation index arrays are what the sampler
    consumes.

    Parameters
    ----------
    records : sequence of ScoreRecord
    n_levels : int
        Number of points on the grading scale (scores must lie in 1..K).
    integer_scores : bool
        If False, half-point (real) scores are accepted. The ordinal model
        refuses such datasets.
    """

    records: tuple[ScoreRecord, ...]
    n_levels: int = 6
    integer_scores: bool = True
    proposal_ids: tuple[str, ...] = field(init=False)
    assessor_ids: tuple[str, ...] = field(init=False)
    panel_ids: tuple[str, ...] | None = field(init=False)
    proposal_index: np.ndarray = field(init=False, repr=False)
    assessor_index: np.ndarray = field(init=False, repr=False)
    panel_index: np.ndarray | None = field(init=False, repr=False)
    scores: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("dataset contains no scores")
        if self.n_levels < 2:
            raise ValidationError(f"n_levels must be >= 2, got {self.n_levels}")

        seen = set()
        with_panel = 0
        for r in records:
            key = (r.proposal_id, r.assessor_id)
            if key in seen:
                raise ValidationError(
                    f"duplicate score for proposal {r.proposal_id!r} "
                    f"and assessor {r.assessor_id!r}")
            seen.add(key)
            if not (1 <= r.score <= self.n_levels):
                raise ValidationError(
                    f"score {r.score} for proposal {r.proposal_id!r}, "
                    f"assessor {r.assessor_id!r} outside 1..{self.n_levels}")
            if self.integer_scores and r.score != int(r.score):
                raise ValidationError(
                    f"non-integer score {r.score} for proposal "
                    f"{r.proposal_id!r}, assessor {r.assessor_id!r}")
            if r.panel_id is not None:
                with_panel += 1
        if 0 < with_panel < len(records):
            raise ValidationError("panel given for some records but not all")

        props = _sort_labels(r.proposal_id for r in records)
        assrs = _sort_labels(r.assessor_id for r in records)
        pmap = {p: i for i, p in enumerate(props)}
        amap = {a: i for i, a in enumerate(assrs)}
        set_ = object.__setattr__
        set_(self, "records", records)
        set_(self, "proposal_ids", tuple(props))
        set_(self, "assessor_ids", tuple(assrs))
        set_(self, "proposal_index",
             np.array([pmap[r.proposal_id] for r in records], dtype=np.int64))
        set_(self, "assessor_index",
             np.array([amap[r.assessor_id] for r in records], dtype=np.int64))
        set_(self, "scores",
             np.array([r.score for r in records], dtype=np.float64))
        if with_panel:
            panels = _sort_labels(r.panel_id for r in records)
            kmap = {k: i for i, k in enumerate(panels)}
            set_(self, "panel_ids", tuple(panels))
            set_(self, "panel_index",
                 np.array([kmap[r.panel_id] for r in records], dtype=np.int64))
        else:
            set_(self, "panel_ids", None)
            set_(self, "panel_index", None)
        for arr in (self.proposal_index, self.assessor_index, self.scores):
            arr.setflags(write=False)

    @property
    def n_proposals(self) -> int:
        return len(self.proposal_ids)

    @property
    def n_assessors(self) -> int:
        return len(self.assessor_ids)

    @property
    def n_panels(self) -> int:
        return 0 if self.panel_ids is None else len(self.panel_ids)

    @property
    def n_obs(self) -> int:
        return len(self.records)

    @property
    def grand_mean(self) -> float:
        return float(self.scores.mean())

    def proposal_means(self) -> np.ndarray:
        """Mean observed score of each proposal."""
        sums = np.bincount(self.proposal_index, self.scores, self.n_proposals)
        counts = np.bincount(self.proposal_index, minlength=self.n_proposals)
        return sums / counts

    def score_matrix(self) -> np.ndarray:
        """Proposal x assessor matrix with NaN for missing scores."""
        mat = np.full((self.n_proposals, self.n_assessors), np.nan)
        mat[self.proposal_index, self.assessor_index] = self.scores
        return mat

    def proposal_panels(self) -> np.ndarray | None:
        """Panel index of each proposal (first record wins if mixed)."""
        if self.panel_index is None:
            return None
        out = np.full(self.n_proposals, -1, dtype=np.int64)
        for p, k in zip(self.proposal_index[::-1], self.panel_index[::-1]):
            out[p] = k
        return out

    def subset_panel(self, panel_id: str) -> "ScoreDataset":
        recs = [dataclasses.replace(r, panel_id=None)
                for r in self.records if r.panel_id == panel_id]
        return ScoreDataset(tuple(recs), self.n_levels, self.integer_scores)

    def shifted(self, constant: float) -> "ScoreDataset":
        """Copy with every score shifted by ``constant``; the scale grows to fit."""
        recs = tuple(dataclasses.replace(r, score=r.score + constant)
                     for r in self.records)
        hi = int(np.ceil(max(r.score for r in recs)))
        return ScoreDataset(recs, max(self.n_levels, hi),
                            self.integer_scores and float(constant).is_integer())


def grand_mean(ds: ScoreDataset) -> float:
    """Arithmetic mean over the observed scores only."""
    return ds.grand_mean


def dataset_from_matrix(y: np.ndarray, n_levels: int = 6,
                        panels: Sequence[str] | None = None) -> ScoreDataset:
    """Build a dataset from a proposal x assessor matrix with NaN gaps.

    Proposals are labelled ``1..n`` and assessors ``1..m``.
    """
    y = np.asarray(y, dtype=float)
    integer = bool(np.all(np.isnan(y) | (y == np.round(y))))
    recs = []
    for i, j in zip(*np.nonzero(~np.isnan(y))):
        recs.append(ScoreRecord(str(i + 1), str(j + 1), float(y[i, j]),
                                None if panels is None else panels[i]))
    return ScoreDataset(tuple(recs), n_levels, integer)


_COLUMNS = ("proposal", "assessor", "panel", "score")


def load_scores(path: str | Path, n_levels: int = 6,
                real_scores: bool = False) -> ScoreDataset:
    """Read a long-format CSV with header ``proposal,assessor[,panel],score``.

    Raises
    ------
    ValidationError
        Empty file, missing columns, unparseable or out-of-range scores,
        duplicated (proposal, assessor) pairs.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        fields = [f.strip() for f in reader.fieldnames]
        missing = {"proposal", "assessor", "score"} - set(fields)
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        has_panel = "panel" in fields
        records = []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k}
            raw = row["score"]
            try:
                score = float(raw) if real_scores else int(raw)
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: score {raw!r} is not "
                    f"{'a number' if real_scores else 'an integer'}") from None
            panel = row["panel"] if has_panel and row["panel"] != "" else None
            records.append(ScoreRecord(row["proposal"], row["assessor"],
                                       float(score), panel))
    if not records:
        raise ValidationError(f"{path}: no score rows")
    return ScoreDataset(tuple(records), n_levels, not real_scores)


def write_scores(ds: ScoreDataset, path: str | Path) -> None:
    """Inverse of :func:`load_scores` (record order preserved)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_panel = ds.panel_ids is not None
        w.writerow(_COLUMNS if has_panel else ("proposal", "assessor", "score"))
        for r in ds.records:
            score = int(r.score) if ds.integer_scores else repr(r.score)
            if has_panel:
                w.writerow((r.proposal_id, r.assessor_id, r.panel_id, score))
            else:
                w.writerow((r.proposal_id, r.assessor_id, score))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ModelConfig:
    """Which member of the model family to fit."""

    outcome: str = "continuous"          # or "ordinal"
    residuals: str = "homogeneous"       # or "heterogeneous"
    panel_effect: bool = False
    n_levels: int = 6

    def __post_init__(self):
        if self.outcome not in ("continuous", "ordinal"):
            raise ValidationError(f"unknown outcome {self.outcome!r}")
        if self.residuals not in ("homogeneous", "heterogeneous"):
            raise ValidationError(f"unknown residuals {self.residuals!r}")
        if self.outcome == "ordinal" and self.n_levels < 2:
            raise ValidationError("ordinal model needs n_levels >= 2")

    @property
    def ordinal(self) -> bool:
        return self.outcome == "ordinal"

    @property
    def heterogeneous(self) -> bool:
        return self.residuals == "heterogeneous"

    def check_dataset(self, ds: ScoreDataset) -> None:
        if self.panel_effect and ds.panel_ids is None:
            raise ValidationError("panel effect requested but data has no panel column")
        if self.ordinal and not ds.integer_scores:
            raise ValidationError("ordinal model requires integer scores")
        if self.ordinal and ds.scores.max() > self.n_levels:
            raise ValidationError("scores exceed the ordinal scale")


@dataclass(frozen=True)
class PriorConfig:
    """Hyper-prior constants.

    Standard deviations tau_theta, tau_lambda, tau_delta and sigma get
    ``Uniform(sd_uniform_lower, sd_uniform_upper]`` priors; assessor means
    ``N(0, nu_prior_sd^2)``; the scale-model regression ``N(0, 10^2)`` and
    ``tau_omega ~ Uniform(0, tau_omega_upper]``.
    """

    sd_uniform_lower: float = 1e-6
    sd_uniform_upper: float = 2.0
    nu_prior_sd: float = 0.5
    scale_alpha_beta_sd: float = 10.0
    tau_omega_upper: float = 10.0

    def __post_init__(self):
        if not 0 < self.sd_uniform_lower < self.sd_uniform_upper:
            raise ValidationError("need 0 < sd_uniform_lower < sd_uniform_upper")
        for name in ("nu_prior_sd", "scale_alpha_beta_sd", "tau_omega_upper"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    n_iter: int = 10_000
    n_burnin: int = 5_000
    n_adapt: int = 5_000
    thin: int = 1
    master_seed: int = 0
    rhat_threshold: float = 1.1
    max_total_iter: int = 1_000_000
    extension_factor: int = 2

    def __post_init__(self):
        for name in ("n_chains", "n_iter", "thin", "extension_factor"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.n_burnin < 0 or self.n_adapt < 0:
            raise ValidationError("n_burnin and n_adapt must be >= 0")
        if self.n_burnin >= self.n_iter:
            raise ValidationError("n_burnin must be smaller than n_iter")
        if self.rhat_threshold <= 1:
            raise ValidationError("rhat_threshold must exceed 1")
        if self.max_total_iter < self.n_iter:
            raise ValidationError("max_total_iter must be >= n_iter")
        if self.extension_factor < 2 and self.max_total_iter > self.n_iter:
            raise ValidationError("extension_factor must be >= 2")

    @property
    def n_keep(self) -> int:
        """Retained draws per chain."""
        return len(range(self.n_burnin, self.n_iter, self.thin))


def _coerce(value: str, target):
    if isinstance(target, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"not a boolean: {value!r}")
    if isinstance(target, int):
        return int(float(value))
    if isinstance(target, float):
        return float(value)
    return value.strip()


def load_config(path: str | Path | None = None, **overrides
                ) -> tuple[ModelConfig, PriorConfig, McmcConfig]:
    """Read a flat ``key = value`` file into the three config objects.

    Every key is optional; keys are the field names of ModelConfig,
    PriorConfig and McmcConfig. Keyword overrides (``None`` ignored) win over
    the file.
    """
    values: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
        values.update(parser["config"])
    out = []
    known = set()
    for cls in (ModelConfig, PriorConfig, McmcConfig):
        defaults = cls()
        kwargs = {}
        for f in dataclasses.fields(cls):
            known.add(f.name)
            if overrides.get(f.name) is not None:
                kwargs[f.name] = overrides[f.name]
            elif f.name in values:
                kwargs[f.name] = _coerce(values[f.name], getattr(defaults, f.name))
        out.append(cls(**kwargs))
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
    return tuple(out)
