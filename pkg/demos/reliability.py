"""Inter-rater reliability of a panel and agreement between two rankings."""
import numpy as np

from bayesrank import McmcConfig, bland_altman, dataset_from_matrix, icc, run_sampler
from bayesrank.ranking import expected_ranks
from bayesrank.simulation import SimScenario, average_ranks, simulate_replicate

rep = simulate_replicate(SimScenario(n_proposals=30, n_assessors=8, missing_max=0), 3)
ds = dataset_from_matrix(rep.y)

for variant in ("one-way", "two-way-consistency", "two-way-agreement"):
    r = icc(ds, variant)
    print(f"ICC {variant:20s} {r.icc:.3f}  95% CI ({r.ci_lower:.3f}, {r.ci_upper:.3f})")

draws = run_sampler(ds, mcmc=McmcConfig(master_seed=5))
er = expected_ranks(draws)
avg = average_ranks(rep.y)
m, lo, hi, _ = bland_altman(er, avg)
print(f"\nER vs average rank: mean difference {m:.3f}, limits of agreement ({lo:.2f}, {hi:.2f})")
print("largest disagreement:", int(np.argmax(np.abs(er - avg))) + 1)
