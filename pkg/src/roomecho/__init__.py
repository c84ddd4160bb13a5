"""roomecho: desk-scale RIR simulation, prediction, and evaluation toolkit."""

from .baselines import (
    ReferenceSet,
    predict_linear_interp,
    predict_nearest,
    predict_random_across,
    predict_random_same,
)
from .dataset import Dataset, GenConfig, SplitSpec, generate_dataset, make_split
from .dsp import (
    AcousticMetrics,
    Spectrogram,
    compute_metrics,
    edc_freq,
    griffin_lim,
    metric_c50,
    metric_edt,
    metric_t60,
    schroeder_edc,
    stft_logmag,
    t60_pct_error,
    time_shift_align,
)
from .evaluation import EvalReport, acoustic_map, evaluate
from .geometry import (
    MATERIAL_LIBRARY,
    Material,
    Placement,
    Room,
    build_reflection_maps,
    depth_to_coords,
    equirect_dirs,
    make_polygonal_room,
    make_shoebox,
    render_panorama_depth,
    sample_placements,
    world_to_camera,
)
from .model import ModelConfig, RIRNet, load_checkpoint, loss_total, save_checkpoint
from .simulate import (
    ImageSource,
    RIRRecord,
    SimConfig,
    enumerate_image_sources,
    image_arrivals,
    sabine_t60,
    simulate_rir,
)
from .training import TrainConfig, train

__version__ = "0.1.0"
