"""Function-valued traits on phylogenies: simulation, decomposition, inference."""

from .errors import (DegenerateDataError, IllConditionedKernelError, NewickParseError,
                     NonConvergenceError, NumericalError, PhylofuncError)
from .estimate import (GammaEstimate, OptimizerConfig, SignalClass, bagged_mle,
                       classify_phylo_signal, mle_gamma, mle_gamma_ratio_constrained)
from .gp import (GammaVector, GaussianPosterior, KernelMatrix, cholesky_with_jitter,
                 gp_posterior, heritable_covariance, log_marginal_likelihood, ou_covariance)
from .ipca import (FixedDimension, IcaResult, IpcaResult, MatchResult, PcaResult,
                   VarianceThreshold, ica, ipca, match_components, pca, select_dimension)
from .reconstruct import (CoverageReport, FunctionValuedPosterior, autocovariance_estimate,
                          coverage_report, reconstruct_functions, reconstruct_row)
from .simulate import (BasisSet, FunctionalDataset, MixingMatrix, SimulationResult,
                       add_tip_noise, default_gamma_set, make_demo_basis, run_simulation,
                       simulate_phylo_ou, synthesize_dataset)
from .trees import (BranchLengthSampler, ConstantLength, EmpiricalLengths, LogNormalLengths,
                    Phylogeny, generate_random_tree, induced_subtree, parse_newick,
                    patristic_distance, patristic_matrix, patristic_percentile, write_newick)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
