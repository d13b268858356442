"""Fixed-effects estimation of panel models under misspecification.

Within (FE) estimation, half-panel jackknife and analytic bias corrections,
clustered covariance inference, the cross-section bootstrap, simulators for
autoregressive panel designs, population oracles and a Monte Carlo harness.
"""

from .bootstrap import (BootstrapRun, IidWeights, Multinomial, UnitWeights, WeightDraw,
                        bootstrap_ccm, bootstrap_distribution, draw_weights, percentile_ci,
                        pivotal_t_ci, weighted_deviation_rescale)
from .dgp import DgpSpec, Dist, SimulatedPanel, simulate_panel
from .errors import ConfigError, DataError, NumericalError, PanelFEError
from .estimators import FitResult, fe_fit, hk_fit, hpj_fit
from .inference import (CcmEstimate, ccm_sigma, normal_ci, normal_quantile, t_statistic,
                        wald_statistic)
from .mc import ExperimentConfig, McResult, emit_report, run_experiment, sweep_T
from .oracle import (BiasTerms, LimitCovariance, MeasurementErrorSpec, PseudoTrue, bias_terms,
                     limit_covariance, pseudo_true_closed_form, pseudo_true_simulated)
from .panel import LagSpec, PanelDataset, build_lagged_design, load_csv, write_csv

__version__ = "0.1.0"
