from enum import Enum
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Precision(str, Enum):
    f32 = 'f32'
    f64 = 'f64'


class Activation(str, Enum):
    relu = 'relu'
    none = 'none'


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class FilterSetSpec(_Strict):
    """K filters of a×b (time frames × frequency bins)."""

    count: int = Field(ge=1)
    height: int = Field(ge=1)
    width: int = Field(ge=1)


class LayerSpec(_Strict):
    sets: List[FilterSetSpec] = Field(min_length=1)
    activation: Activation = Activation.relu

    @property
    def out_channels(self) -> int:
        return sum(s.count for s in self.sets)


class ConvNetworkSpec(_Strict):
    kind: Literal['conv'] = 'conv'
    input_frames: int = Field(default=15, ge=1)
    input_bins: int = Field(default=1025, ge=1)
    layers: List[LayerSpec] = Field(min_length=1)

    @model_validator(mode='after')
    def check_final_layer(self):
        if self.layers[-1].out_channels != 1:
            raise ValueError('final layer must hold exactly one filter')
        return self


class MlpSpec(_Strict):
    """Frame-wise fully connected network; widths include input and output."""

    kind: Literal['mlp'] = 'mlp'
    layer_widths: List[Annotated[int, Field(ge=1)]] = Field(min_length=2)
    hidden_activation: Activation = Activation.relu
    output_activation: Activation = Activation.relu


NetworkSpec = Annotated[Union[ConvNetworkSpec, MlpSpec], Field(discriminator='kind')]


class TrainConfig(_Strict):
    batch_size: int = Field(default=100, ge=1)
    lr0: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    plateau_factor: float = Field(default=0.1, gt=0, lt=1)
    plateau_patience: int = Field(default=3, ge=1)
    max_epochs: int = Field(default=100, ge=0)
    seed: int = 0
    min_lr: float = Field(default=1e-8, ge=0)


class StftConfig(_Strict):
    window: int = Field(default=2048, ge=2)
    hop: int = Field(default=512, ge=1)
    fft: int = Field(default=2048, ge=2)
    bins: int = Field(default=1025, ge=2)
    sample_rate: int = Field(default=44100, gt=0)

    @model_validator(mode='after')
    def check_geometry(self):
        if self.window > self.fft:
            raise ValueError('window length cannot exceed fft size')
        if self.bins != self.fft // 2 + 1:
            raise ValueError(f'bins must equal fft // 2 + 1 = {self.fft // 2 + 1}')
        return self


class SegmentConfig(_Strict):
    N: int = Field(default=15, ge=1)
    stride_train: int = Field(default=15, ge=1)
    stride_infer: int = Field(default=15, ge=1)
    # Global magnitude scale applied on the way in and undone on the way out.
    scale: float = Field(default=1.0, gt=0)


class BssConfig(_Strict):
    filter_len: int = Field(default=512, ge=1)
    cap_db: float = Field(default=300.0, gt=0)
    window: Literal['track'] = 'track'


class EvalResult(BaseModel):
    sdr: float
    sir: float
    sar: float
    flags: List[str] = []


class SplitSpec(_Strict):
    ratio: float = Field(default=0.9, ge=0, le=1)
    boundary: Optional[int] = Field(default=None, ge=0)
    seed: int = 0


class SynthConfig(_Strict):
    num_tracks: int = Field(default=8, ge=1)
    duration: float = Field(default=3.0, ge=1.0)
    seed: int = 0
    sample_rate: int = Field(default=44100, gt=0)


class TrackPair(BaseModel):
    track_id: str
    mixture_path: Path
    target_paths: Dict[str, Path]
    sample_rate: Optional[int] = None
    num_samples: Optional[int] = None


class SourcesConfig(_Strict):
    target: str = 'tones'
    names: List[str] = Field(default_factory=lambda: ['tones', 'noise'], min_length=1)

    @model_validator(mode='after')
    def check_target(self):
        if self.target not in self.names:
            raise ValueError(f"target source '{self.target}' is not listed in names")
        return self


class PathsConfig(_Strict):
    corpus: Path = Path('corpus')
    checkpoints: Path = Path('checkpoints')
    reports: Path = Path('reports')


class RunConfig(_Strict):
    stft: StftConfig = StftConfig()
    segments: SegmentConfig = SegmentConfig()
    model: Union[str, NetworkSpec] = 'mr-fcnn'
    train: TrainConfig = TrainConfig()
    eval: BssConfig = BssConfig()
    sources: SourcesConfig = SourcesConfig()
    split: SplitSpec = SplitSpec()
    synth: SynthConfig = SynthConfig()
    paths: PathsConfig = PathsConfig()
    seed: int = 0
    precision: Precision = Precision.f32
    soft_mask: bool = False
