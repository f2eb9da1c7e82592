"""Sequential change detection and spatial localization for spatio-temporal
event streams."""

__version__ = "0.1.0"

from .events import Domain, Event, EventStream, TransformedEvent, neighborhood, transform_event
from .regions import RegionUnion, dilate, erode, jaccard, region_area
from .simulate import ChangeScenario, HawkesParams, intensity_at, simulate, stationary_intensity
from .score import (AnalyticScoreModel, WeightConfig, anomaly, dsm_loss, hyvarinen,
                    score_diff_closed_form, weight)
from .nets import DSMConfig, NetWeights, NeuralScoreModel, train_score_model
from .detect import DetectionResult, ScoredEvent, istep, ostep, run_detector, run_online_detector, statistic
from .baselines import BinnedSeries, bin_events, cusum_binned, min_cusum, pp_cusum, scusum_binned
from .calibrate import CalibrationConfig, calibrate_threshold, empirical_arl
from .evaluate import TrialBatch, edd, jaccard_at_stop, jaccard_lower_bound, region_evolution, tradeoff_curve
