"""Score a synthetic panel, rank the proposals and run the funding lottery.

    python demos/rank_and_decide.py [budget]
"""
import sys

import numpy as np

from bayesrank import (McmcConfig, ModelConfig, dataset_from_matrix, decide, run_sampler,
                       summarize)
from bayesrank.simulation import SimScenario, simulate_replicate

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 6

# 18 proposals, 10 assessors, some scores missing
rep = simulate_replicate(SimScenario(n_proposals=18, n_assessors=10, missing_max=40), 7)
ds = dataset_from_matrix(rep.y)
print(f"{ds.n_proposals} proposals, {ds.n_assessors} assessors, {ds.n_obs} scores")

draws = run_sampler(ds, ModelConfig(), mcmc=McmcConfig(master_seed=1))
print("converged:", draws.converged, " max R-hat:", round(max(draws.rhat.values()), 3))

s = summarize(draws, level=0.5)
print("\nrank  proposal    ER   50% CrI   true rank")
for pos, i in enumerate(s.order(), 1):
    print(f"{pos:4d}  {s.proposal_ids[i]:>8}  {s.er[i]:5.2f}  [{s.cri[i, 0]:2d}, "
          f"{s.cri[i, 1]:2d}]   {rep.rank_true[i]:4d}")

dec = decide(s, budget, seed=2024)
print(f"\nfunding line (ER of proposal #{budget}): {dec.funding_line:.2f}")
print("funded outright:", ", ".join(dec.funded))
if dec.lottery_held:
    print(f"lottery for {dec.slots} slot(s) among:", ", ".join(dec.lottery_group))
    print("lottery winners:", ", ".join(dec.lottery_winners))
else:
    print("no lottery needed")
for note in dec.notes:
    print("note:", note)

corr = np.corrcoef(s.er, rep.rank_true)[0, 1]
print(f"\ncorrelation of ER with the true ranks: {corr:.3f}")
