from .schemas import (
    Activation,
    BssConfig,
    ConvNetworkSpec,
    EvalResult,
    FilterSetSpec,
    LayerSpec,
    MlpSpec,
    NetworkSpec,
    Precision,
    RunConfig,
    SegmentConfig,
    SourcesConfig,
    SplitSpec,
    StftConfig,
    SynthConfig,
    TrackPair,
    TrainConfig,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    NonFiniteGradientError,
    SeparationError,
    ShapeError,
    StaleCacheError,
    StftParameterError,
    WavFormatError,
    WavIOError,
)
from .tensor_ops import concat_channels, conv2d_same, conv2d_same_backward, resolve_dtype, split_channels
from .network import (
    AnySpec,
    Model,
    backward,
    builtin_specs,
    count_parameters,
    forward,
    get_builtin,
    init_model,
    predict,
    scale_spec,
    toy_spec,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainHistory, adam_step, mse_cost, plateau_update, train
from .audio import Waveform, desegment, istft, load_wav, segment, separate, stft, write_wav
from .dataset import build_segment_pairs, collect_segments, make_synthetic, scan_corpus, split
from .evaluation import CorpusReport, bonferroni, bss_eval, evaluate_corpus, wilcoxon_signed_rank, write_reports
from .gradcheck import GradcheckReport, gradcheck

__all__ = [
    "Activation",
    "AnySpec",
    "BssConfig",
    "CheckpointError",
    "ConfigError",
    "ConvNetworkSpec",
    "CorpusError",
    "CorpusReport",
    "EvalResult",
    "FilterSetSpec",
    "GradcheckReport",
    "LayerSpec",
    "MlpSpec",
    "Model",
    "NetworkSpec",
    "NonFiniteGradientError",
    "Precision",
    "RunConfig",
    "SegmentConfig",
    "SeparationError",
    "ShapeError",
    "SourcesConfig",
    "SplitSpec",
    "StaleCacheError",
    "StftConfig",
    "StftParameterError",
    "SynthConfig",
    "TrackPair",
    "TrainConfig",
    "TrainHistory",
    "WavFormatError",
    "WavIOError",
    "Waveform",
    "adam_step",
    "backward",
    "bonferroni",
    "bss_eval",
    "build_segment_pairs",
    "builtin_specs",
    "collect_segments",
    "concat_channels",
    "conv2d_same",
    "conv2d_same_backward",
    "count_parameters",
    "desegment",
    "evaluate_corpus",
    "forward",
    "get_builtin",
    "gradcheck",
    "init_model",
    "istft",
    "load_checkpoint",
    "load_wav",
    "make_synthetic",
    "mse_cost",
    "plateau_update",
    "predict",
    "resolve_dtype",
    "save_checkpoint",
    "scale_spec",
    "scan_corpus",
    "segment",
    "separate",
    "split",
    "split_channels",
    "stft",
    "toy_spec",
    "train",
    "wilcoxon_signed_rank",
    "write_reports",
    "write_wav",
]
