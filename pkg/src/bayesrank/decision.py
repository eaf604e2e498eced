"""Funding line, fund/lottery/reject partition and the seeded lottery."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ranking import RankingSummary

log = logging.getLogger(__name__)

__all__ = [
    "FundingDecision",
    "provisional_funding_line",
    "partition",
    "lottery_draw",
    "decide",
    "write_decision_csv",
    "write_decision_json",
]


@dataclass
class FundingDecision:
    funding_line: float
    budget: int
    funded: tuple = ()
    lottery_group: tuple = ()
    lottery_winners: tuple = ()
    rejected: tuple = ()
    lottery_seed: int | None = None
    slots: int = 0
    notes: list = field(default_factory=list)

    @property
    def lottery_held(self) -> bool:
        return len(self.lottery_group) > 0

    @property
    def lottery_losers(self) -> tuple:
        won = set(self.lottery_winners)
        return tuple(p for p in self.lottery_group if p not in won)

    def group_of(self, proposal) -> str:
        if proposal in self.funded:
            return "funded"
        if proposal in self.lottery_winners:
            return "lottery_won"
        if proposal in self.lottery_group:
            return "lottery_lost"
        return "rejected"


def provisional_funding_line(summary: RankingSummary, x: int) -> float:
    """ER of the x-th best proposal."""
    n = summary.n
    if not 1 <= x <= n:
        raise ValueError(f"budget must lie in 1..{n}, got {x}")
    return float(summary.er[summary.order()[x - 1]])


def partition(summary: RankingSummary, funding_line: float, x: int) -> FundingDecision:
    """Split proposals into funded, lottery group and rejected (no winners yet).

    A proposal overlaps the funding line when its rank credible interval
    contains it, endpoints included. A lottery is held only if some
    overlapping proposal sits below position x; remaining slots are
    ``x - |funded|``, and if they cover the whole group it is funded outright.
    """
    n = summary.n
    if not 1 <= x <= n:
        raise ValueError(f"budget must lie in 1..{n}, got {x}")
    ids = summary.proposal_ids
    order = summary.order()
    position = np.empty(n, dtype=int)
    position[order] = np.arange(1, n + 1)
    lo, hi = summary.cri[:, 0], summary.cri[:, 1]
    overlap = (lo <= funding_line) & (funding_line <= hi)
    dec = FundingDecision(funding_line=float(funding_line), budget=x)

    boundary = order[x - 1]
    if not overlap[boundary]:
        dec.notes.append(f"credible interval of the boundary proposal {ids[boundary]} "
                         "excludes the funding line")
        log.warning(dec.notes[-1])
    er_at_line = np.flatnonzero(summary.er == summary.er[boundary])
    if er_at_line.size > 1:
        dec.notes.append("ER tie at the funding line broken by identifier: "
                         + ", ".join(str(ids[i]) for i in er_at_line))
        log.warning(dec.notes[-1])

    top = position <= x
    if not np.any(overlap & ~top):
        dec.funded = tuple(ids[i] for i in order[:x])
        dec.rejected = tuple(ids[i] for i in order[x:])
        return dec

    in_group = [i for i in order if overlap[i]]
    funded = [i for i in order if top[i] and not overlap[i]]
    rejected = [i for i in order if not top[i] and not overlap[i]]
    slots = x - len(funded)
    if slots >= len(in_group):
        dec.notes.append("enough slots for the whole overlap group; no lottery")
        funded = [i for i in order if top[i] or overlap[i]]
        dec.funded = tuple(ids[i] for i in funded)
        dec.rejected = tuple(ids[i] for i in rejected)
        return dec
    dec.funded = tuple(ids[i] for i in funded)
    dec.lottery_group = tuple(ids[i] for i in in_group)
    dec.rejected = tuple(ids[i] for i in rejected)
    dec.slots = slots
    return dec


def _label_key(p):
    # numeric labels in numeric order, others after them alphabetically
    try:
        return (0, float(p), str(p))
    except (TypeError, ValueError):
        return (1, 0.0, str(p))


def lottery_draw(group: Sequence, slots: int, seed) -> tuple:
    """Uniform draw of ``slots`` winners without replacement.

    The group is put in a canonical (sorted) order first so the result
    depends on the set and the seed only.
    """
    group = sorted(group, key=_label_key)
    if not 0 <= slots <= len(group):
        raise ValueError(f"slots must lie in 0..{len(group)}, got {slots}")
    if slots == 0:
        return ()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(group), size=slots, replace=False)
    return tuple(group[i] for i in sorted(idx))


def decide(summary: RankingSummary, x: int, seed: int = 0) -> FundingDecision:
    """Funding line, partition and lottery in one call."""
    fl = provisional_funding_line(summary, x)
    dec = partition(summary, fl, x)
    dec.lottery_seed = int(seed)
    if dec.lottery_held:
        dec.lottery_winners = lottery_draw(dec.lottery_group, dec.slots, seed)
    return dec


def write_decision_csv(summary: RankingSummary, dec: FundingDecision, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("proposal", "er", "cri_lower", "cri_upper", "group"))
        for i in summary.order():
            p = summary.proposal_ids[i]
            w.writerow((p, repr(float(summary.er[i])), int(summary.cri[i, 0]),
                        int(summary.cri[i, 1]), dec.group_of(p)))


def write_decision_json(dec: FundingDecision, path) -> None:
    doc = {
        "funding_line": dec.funding_line,
        "budget": dec.budget,
        "seed": dec.lottery_seed,
        "lottery_held": dec.lottery_held,
        "lottery_slots": dec.slots,
        "sizes": {"funded": len(dec.funded), "lottery_group": len(dec.lottery_group),
                  "lottery_winners": len(dec.lottery_winners),
                  "rejected": len(dec.rejected)},
        "funded": list(dec.funded),
        "lottery_group": list(dec.lottery_group),
        "lottery_winners": list(dec.lottery_winners),
        "rejected": list(dec.rejected),
        "notes": dec.notes,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
