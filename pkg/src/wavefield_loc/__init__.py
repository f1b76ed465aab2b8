"""Multipath channel simulation and model-based sub-wavelength localization."""

from ._version import __version__
from .channel import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    ChannelGradient,
    ChannelMatrix,
    FreqGrid,
    add_noise,
    channel_gradient,
    nmse,
    synthesize,
)
from .dataio import Dataset, read_dataset, write_dataset
from .errors import (
    DegenerateChannelError,
    DimensionMismatchError,
    EmptyDatabaseError,
    EmptyRegionError,
    GeometryError,
    IllConditionedFitError,
    SingularityError,
    WavefieldError,
)
from .locengine import (
    GridSpec,
    LocalizerConfig,
    LocalizationResult,
    build_global_grid,
    build_local_grid,
    count_model_evals,
    gradient_descent,
    grid_search,
    localize,
    localize_many,
    sample_circles,
)
from .baselines import FingerprintDB, fingerprint_memory_bits, knn_error_scaling, knn_localize
from .metric import LossValue, pi_distance, ps_distance, ps_gradient, similarity
from .model import ChannelModel, fit_kernel_surrogate, make_exact, make_perturbed
from .scene import (
    Rect,
    Scene,
    VirtualSource,
    Wall,
    enumerate_virtual_sources,
    load_scene,
    path_visible,
    reflect_point,
    save_scene,
    visible_sources,
)

__all__ = [name for name in dir() if not name.startswith("_")]
