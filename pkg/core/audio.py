"""Waveform I/O, STFT analysis/synthesis, segmentation and separation."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import signal
from scipy.io import wavfile

from .errors import ShapeError, StftParameterError, WavFormatError, WavIOError
from .network import AnySpec, Model, predict
from .schemas import ConvNetworkSpec, SegmentConfig, StftConfig

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
# sample format problems are reported against the format chunk
FMT_CHUNK = 'fmt '


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f'sample rate must be positive, got {self.sample_rate}')
        self.samples = np.asarray(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def _check_riff_header(path: Path) -> None:
    with open(path, 'rb') as f:
        head = f.read(12)
    if len(head) < 12:
        raise WavIOError(f'{path}: truncated RIFF header')
    if head[:4] != b'RIFF':
        raise WavFormatError(f'{path}: not a RIFF file', chunk_id=head[:4].decode('latin-1'))
    if head[8:12] != b'WAVE':
        raise WavFormatError(f'{path}: RIFF form is not WAVE', chunk_id=head[8:12].decode('latin-1'))
    declared = int.from_bytes(head[4:8], 'little') + 8
    actual = path.stat().st_size
    if actual < declared:
        raise WavIOError(f'{path}: truncated file ({actual} of {declared} bytes)')


def load_wav(path: Union[str, Path]) -> Waveform:
    """Read a PCM16 or float32 WAV file, downmixing stereo by averaging."""
    path = Path(path)
    try:
        _check_riff_header(path)
    except FileNotFoundError as e:
        raise WavIOError(f'{path}: no such file') from e
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise WavFormatError(f'{path}: {e}', chunk_id=FMT_CHUNK) from e
    except (EOFError, OSError) as e:
        raise WavIOError(f'{path}: {e}') from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f'{path}: unsupported sample format {data.dtype}', chunk_id=FMT_CHUNK)

    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise WavFormatError(f'{path}: {samples.shape[1]} channels, only mono/stereo supported', chunk_id=FMT_CHUNK)
        samples = samples.mean(axis=1)
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path: Union[str, Path], waveform: Waveform, subtype: str = 'float32') -> Path:
    """Write a mono WAV file as ``float32`` or ``pcm16``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if subtype == 'float32':
        data = np.asarray(waveform.samples, dtype=np.float32)
    elif subtype == 'pcm16':
        scaled = np.round(np.asarray(waveform.samples, dtype=np.float64) * PCM16_SCALE)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f'unknown WAV subtype: {subtype}')
    try:
        wavfile.write(path, waveform.sample_rate, data)
    except OSError as e:
        raise WavIOError(f'{path}: {e}') from e
    return path


@dataclass
class Spectrogram:
    frames: np.ndarray  # complex [num_frames, bins]
    config: StftConfig
    num_samples: int
    padded: bool = False

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def analysis_window(config: StftConfig, dtype=np.float64) -> np.ndarray:
    # periodic (DFT-even) Hann
    return signal.get_window('hann', config.window, fftbins=True).astype(dtype)


def stft(waveform: Waveform, config: Optional[StftConfig] = None, dtype=None) -> Spectrogram:
    config = config or StftConfig()
    x = np.asarray(waveform.samples, dtype=np.float64 if dtype is None else dtype)
    num_samples = len(x)
    padded = False
    if num_samples < config.window:
        logger.warning('signal of %d samples is shorter than one window; zero-padding', num_samples)
        x = np.pad(x, (0, config.window - num_samples))
        padded = True
    num_frames = 1 + (len(x) - config.window) // config.hop
    views = np.lib.stride_tricks.sliding_window_view(x, config.window)[::config.hop][:num_frames]
    window = analysis_window(config, x.dtype)
    frames = sp_fft.rfft(views * window, n=config.fft, axis=-1)
    return Spectrogram(frames=frames, config=config, num_samples=num_samples, padded=padded)


def istft(spec: Spectrogram, length: Optional[int] = None) -> Waveform:
    """Weighted overlap-add inverse, normalized by the summed squared window."""
    config = spec.config
    if config.hop > config.window:
        raise StftParameterError(f'hop {config.hop} exceeds window {config.window}: frames leave gaps')
    real_dtype = np.float32 if spec.frames.dtype == np.complex64 else np.float64
    window = analysis_window(config, real_dtype)
    chunks = sp_fft.irfft(spec.frames, n=config.fft, axis=-1)[:, :config.window] * window
    n = config.window + (spec.num_frames - 1) * config.hop
    out = np.zeros(n, dtype=real_dtype)
    norm = np.zeros(n, dtype=real_dtype)
    wsq = np.square(window)
    for i, chunk in enumerate(chunks):
        start = i * config.hop
        out[start:start + config.window] += chunk
        norm[start:start + config.window] += wsq

    # the periodic window vanishes at each frame's first sample, so only the
    # outer edges can legitimately go unnormalized
    inner = norm[config.window:n - config.window] if n > 2 * config.window else norm[:0]
    if inner.size and np.min(inner) <= np.finfo(real_dtype).tiny:
        raise StftParameterError('zero overlap-add normalization inside the signal')
    nonzero = norm > np.finfo(real_dtype).eps
    out[nonzero] /= norm[nonzero]
    out[~nonzero] = 0.0

    length = spec.num_samples if length is None else length
    if length <= n:
        out = out[:length]
    else:
        out = np.pad(out, (0, length - n))
    return Waveform(samples=out, sample_rate=config.sample_rate)


@dataclass
class SegmentBatch:
    items: np.ndarray  # [batch, 1, N, F]
    offsets: List[int] = field(default_factory=list)
    total_frames: int = 0

    def __len__(self) -> int:
        return len(self.items)


def _segment_starts(total_frames: int, N: int, stride: int) -> List[int]:
    starts = list(range(0, max(total_frames - N, 0) + 1, stride))
    while starts[-1] + N < total_frames:
        starts.append(starts[-1] + stride)
    return starts


def segment(magnitude: np.ndarray, N: int = 15, stride: int = 15) -> SegmentBatch:
    """Cut ``[frames, bins]`` into N-frame tiles; the tail tile is zero-padded."""
    if N < 1 or stride < 1:
        raise ValueError(f'N and stride must be positive, got N={N}, stride={stride}')
    if magnitude.ndim != 2 or magnitude.shape[0] == 0:
        raise ShapeError(f'magnitude must be a non-empty [frames, bins] matrix, got {magnitude.shape}')
    total, bins = magnitude.shape
    starts = _segment_starts(total, N, stride)
    items = np.zeros((len(starts), 1, N, bins), dtype=magnitude.dtype)
    for i, s in enumerate(starts):
        chunk = magnitude[s:s + N]
        items[i, 0, :len(chunk)] = chunk
    return SegmentBatch(items=items, offsets=starts, total_frames=total)


def desegment(batch: SegmentBatch, total_frames: Optional[int] = None) -> np.ndarray:
    """Reassemble tiles into ``[frames, bins]``, averaging overlapping frames."""
    total = batch.total_frames if total_frames is None else total_frames
    _, _, N, bins = batch.items.shape
    span = max(total, (batch.offsets[-1] + N) if batch.offsets else 0)
    acc = np.zeros((span, bins), dtype=np.float64)
    counts = np.zeros(span, dtype=np.int64)
    for item, s in zip(batch.items, batch.offsets):
        acc[s:s + N] += item[0]
        counts[s:s + N] += 1
    covered = counts > 0
    acc[covered] /= counts[covered, None]
    return acc[:total].astype(batch.items.dtype, copy=False)


def _spec_geometry(spec: AnySpec, segments: SegmentConfig):
    if isinstance(spec, ConvNetworkSpec):
        return spec.input_frames, spec.input_bins
    return segments.N, spec.layer_widths[0]


def soft_mask(estimate: np.ndarray, mixture: np.ndarray) -> np.ndarray:
    """Single-network Wiener-style mask applied to the mixture magnitude."""
    residual = np.maximum(mixture - estimate, 0)
    num = np.square(estimate)
    den = num + np.square(residual)
    mask = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return mask * mixture


def separate(
    model: Model,
    mixture: Waveform,
    stft_config: Optional[StftConfig] = None,
    segments: Optional[SegmentConfig] = None,
    use_soft_mask: bool = False,
    batch_size: int = 100,
) -> Waveform:
    """Estimate one source: mixture magnitude through the model, mixture phase reused."""
    stft_config = stft_config or StftConfig(sample_rate=mixture.sample_rate)
    segments = segments or SegmentConfig()
    frames, bins = _spec_geometry(model.spec, segments)
    if bins != stft_config.bins:
        raise ShapeError(f'model expects {bins} frequency bins, STFT produces {stft_config.bins}')

    n = len(mixture)
    # one window of silence on each side keeps every input sample away from the
    # weakly normalized outer edges of the overlap-add; trimmed after synthesis
    lead = stft_config.window
    total = lead + n + stft_config.window
    total += (-(total - stft_config.window)) % stft_config.hop
    padded = Waveform(np.pad(np.asarray(mixture.samples, dtype=model.dtype), (lead, total - lead - n)),
                      mixture.sample_rate)
    spec = stft(padded, stft_config, dtype=model.dtype)
    mag = spec.magnitude

    batch = segment(mag / segments.scale, frames, segments.stride_infer)
    batch.items = predict(model, batch.items, batch_size=batch_size)
    estimate = np.maximum(desegment(batch, spec.num_frames), 0) * segments.scale
    if use_soft_mask:
        estimate = soft_mask(estimate, mag)

    phase = np.exp(1j * spec.phase).astype(spec.frames.dtype, copy=False)
    out_spec = Spectrogram(frames=estimate * phase, config=stft_config, num_samples=n)
    result = istft(out_spec, length=total)
    return Waveform(samples=result.samples[lead:lead + n], sample_rate=mixture.sample_rate)
