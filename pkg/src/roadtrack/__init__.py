"""On/off-road GPS tracking with Rao-Blackwellized particle learning.

Core pieces:

* :mod:`roadtrack.network`     directed road graphs and arc-length paths
* :mod:`roadtrack.motion`      road/ground kinematics and projections
* :mod:`roadtrack.transitions` on/off switch prior with Beta learning
* :mod:`roadtrack.inference`   soft edge assignment + Kalman recursions
* :mod:`roadtrack.search`      A* candidate path generation
* :mod:`roadtrack.filters`     particle-learning and bootstrap filters
* :mod:`roadtrack.simulate`    ground-truth trajectory generation
* :mod:`roadtrack.evaluation`  RMSE / credible-interval experiment harness
"""

from .network import (
    OFF_ROAD,
    Edge,
    GeoPoint,
    NULL_PATH,
    PathCandidate,
    RoadGraph,
    build_graph,
    edge_distance_bounds,
    edge_stats,
    grid_edge_records,
    grid_graph,
    load_graph,
    locate_on_path,
    save_graph,
)
from .motion import (
    EdgeTransform,
    GaussianBelief,
    GroundState,
    NoiseConfig,
    RoadState,
    edge_transform,
    gaussian_logpdf,
    ground_belief,
    ground_predict,
    observe_likelihood,
    road_belief,
    road_predict,
    to_ground,
    to_road,
)
from .transitions import (
    TransitionParams,
    TransitionPrior,
    sample_params,
    transition_probability,
    update_counts,
)
from .inference import (
    EdgePrediction,
    PosteriorComponent,
    condition_on_edge,
    edge_membership_density,
    edge_predictive_weight,
    gaussian_product,
    kalman_update,
    predict_for_paths,
)
from .search import PathFinder, SearchConfig
from .filters import (
    BsParticle,
    DegenerateWeightsError,
    FilterOutput,
    Particle,
    bs_step,
    effective_sample_size,
    multinomial_resample,
    pl_step,
    propagate_state,
    run_bs,
    run_pl,
    should_resample,
    substream,
)
from .simulate import SimConfig, SimRecord, simulate
from .evaluation import (
    ConfigError,
    MetricRow,
    RunConfig,
    credible_interval,
    load_config,
    parse_config,
    rmse,
    run,
)

__version__ = "0.1.0"
