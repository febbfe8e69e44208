"""History-aware Shapley contribution assessment for federated learning runs."""

from .datasets import Dataset, load_csv, make_synthetic, train_validation_split
from .errors import ConfigurationError, ContractError, FedShapleyError, IngestionError
from .models import (LocalTrainConfig, ModelKind, ModelSpec, Utility, evaluate_utility,
                     init_model, local_train)
from .scheduling import (ObjectiveKind, Optimality, Schedule, ScheduleProblem, SolverKind,
                         build_problem, evaluate_objective, solve_exhaustive,
                         solve_one_sided, solve_two_sided_exact, solve_two_sided_lb)
from .shapley import (AssessmentResult, ContributionTimeline, EpochEvaluator, Exact,
                      MonteCarloPermutation, PluginApproximation, approx_epoch_shapley,
                      assess, exact_epoch_shapley, greedy_aggregate, incremental_utilities,
                      initial_allocation, lambda_weight, mse_vs_exact,
                      reconstruct_submodel, register_approximation)
from .simulation import (ClientConfig, EpochRecord, GradientLog, Scenario,
                         fedavg_aggregate, partition_noniid, poison_labels,
                         run_simulation, select_clients)
from .detection import (ChangePointPosterior, ChangePointPrior, ClusterAssignment,
                        cluster_clients, cumulative_series, detect_change_points,
                        jaccard_honest_separation, window_mass)

__version__ = "0.1.0"
