"""Small version of the MSE comparison between score averaging and the
Bayesian expected rank.

    python demos/simulation_study.py [replicates]

The full-size run is ``bayesrank simulate --replicates 500``.
"""
import sys

from bayesrank import McmcConfig, SimScenario, compare_methods

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
# a lighter chain budget keeps this to a minute or two
mcmc = McmcConfig(n_chains=4, n_iter=4000, n_burnin=2000, n_adapt=1000)
table = compare_methods(SimScenario(n_replicates=n), mcmc, seed=1,
                        methods=["average", "normal_homogeneous", "ordinal_homogeneous"])

print(f"{'method':22s} {'MSE':>7s} {'MC SE':>7s}  non-converged")
for r in table.values():
    print(f"{r.method:22s} {r.mse:7.3f} {r.mc_se:7.3f}  {r.n_nonconverged}/{r.n_replicates}")
