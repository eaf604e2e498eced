"""Bayesian expected-rank summaries and lottery-based funding decisions for
proposals scored by assessment panels."""
from .convergence import gelman_rubin, split_rhat
from .data import (McmcConfig, ModelConfig, PriorConfig, ScoreDataset, ScoreRecord,
                   ValidationError, dataset_from_matrix, grand_mean, load_config,
                   load_scores, write_scores)
from .decision import (FundingDecision, decide, lottery_draw, partition,
                       provisional_funding_line)
from .diagnostics import IccResult, bland_altman, icc, trace_export
from .ranking import (RankingSummary, expected_ranks, pcer, rank_credible_interval,
                      rankogram, sucra, summarize)
from .sampler import (ConvergenceWarning, ParameterState, PosteriorDraws, gibbs_step,
                      initial_state, log_likelihood, run_sampler)
from .simulation import SimScenario, compare_methods, mse, simulate_replicate, true_ranks

__version__ = "0.1.0"
