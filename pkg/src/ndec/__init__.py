"""Motor-decoder benchmark toolkit.

Pipeline: multi-probe spike sessions (synthetic or converted recordings)
-> windowed/streaming features -> ANN / SNN / LSTM decoders trained from
scratch -> optional Bessel output filtering -> accuracy-vs-cost reports.
"""

__version__ = "0.1.0"

from .bench import (
    BenchReport,
    benchmark,
    count_operations,
    estimate_memory_access,
    latency_estimate,
    model_size_bytes,
    pareto_front,
    r2_score,
    size_sweep,
)
from .data import (
    ReachBoundaries,
    Session,
    SplitSpec,
    SynthConfig,
    load_session,
    make_splits,
    remove_long_reaches,
    save_session,
    segment_reaches,
    split_reaches,
    synth_session,
)
from .features import FeatureConfig, FeatureSeries, extract_features, firing_rate, preset_config
from .filters import FilterSpec, IIRCoefficients, apply_filter, design_bessel, filter_grid_search
from .models import (
    LIFParams,
    LIFState,
    Model,
    init_model,
    lif_step,
    load_model,
    model_forward,
    predict_series,
    reset_state,
    save_model,
)
from .train import (
    AdamWState,
    TrainConfig,
    adamw_update,
    backprop_gradients,
    lr_schedule,
    mse_loss,
    surrogate_grad,
    train,
)
