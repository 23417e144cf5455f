"""Corpus scanning, train/validation splits, segment streams and a synthetic corpus.

Corpus layout::

    root/<track>/mixture.wav
    root/<track>/<source>.wav   (one per source name)
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .audio import SegmentBatch, Waveform, load_wav, segment, stft, write_wav
from .errors import CorpusError, SeparationError
from .schemas import SegmentConfig, SplitSpec, StftConfig, SynthConfig, TrackPair

logger = logging.getLogger(__name__)

MIXTURE_FILE = 'mixture.wav'
SYNTH_SOURCES = ('tones', 'noise')
ADDITIVITY_TOLERANCE = 1e-3


@dataclass
class ScanResult:
    pairs: List[TrackPair] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def _read_header(path: Path) -> Tuple[int, int]:
    wav = load_wav(path)
    return wav.sample_rate, len(wav)


def check_additivity(pair: TrackPair) -> float:
    """RMS of ``mixture - sum(stems)`` over the common length."""
    mixture = load_wav(pair.mixture_path).samples
    stems = [load_wav(p).samples for p in pair.target_paths.values()]
    n = min([len(mixture)] + [len(s) for s in stems])
    residual = mixture[:n] - np.sum([s[:n] for s in stems], axis=0)
    return float(np.sqrt(np.mean(np.square(residual)))) if n else 0.0


def scan_corpus(root: Path, source_names: Sequence[str], additivity: bool = False) -> ScanResult:
    """Collect well-formed tracks under ``root`` in lexicographic order.

    Tracks with missing or unreadable files, or mismatched sample rates, are
    skipped and reported rather than failing the scan.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f'corpus directory not found: {root}')
    result = ScanResult()
    for track_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        track_id = track_dir.name
        mixture = track_dir / MIXTURE_FILE
        targets = {name: track_dir / f'{name}.wav' for name in source_names}
        missing = [p.name for p in [mixture, *targets.values()] if not p.exists()]
        if missing:
            reason = f"missing {', '.join(missing)}"
            logger.warning('Skipping track %s: %s', track_id, reason)
            result.skipped.append((track_id, reason))
            continue
        try:
            headers = {p: _read_header(p) for p in [mixture, *targets.values()]}
        except SeparationError as e:
            logger.warning('Skipping track %s: %s', track_id, e)
            result.skipped.append((track_id, str(e)))
            continue
        rates = {rate for rate, _ in headers.values()}
        if len(rates) > 1:
            reason = f'sample rates differ: {sorted(rates)}'
            logger.warning('Skipping track %s: %s', track_id, reason)
            result.skipped.append((track_id, reason))
            continue
        lengths = {n for _, n in headers.values()}
        if len(lengths) > 1:
            logger.warning('Track %s: file lengths differ %s, trimming to %d samples',
                           track_id, sorted(lengths), min(lengths))
        pair = TrackPair(track_id=track_id, mixture_path=mixture, target_paths=targets,
                         sample_rate=rates.pop(), num_samples=min(lengths))
        if additivity:
            rms = check_additivity(pair)
            if rms > ADDITIVITY_TOLERANCE:
                reason = f'mixture differs from the sum of stems (rms {rms:.3g})'
                logger.warning('Skipping track %s: %s', track_id, reason)
                result.skipped.append((track_id, reason))
                continue
        result.pairs.append(pair)

    if not result.pairs:
        raise CorpusError(f'no usable tracks under {root}')
    logger.info('Scanned %s: %d tracks, %d skipped', root, len(result.pairs), len(result.skipped))
    return result


@dataclass
class SplitResult:
    train: List[TrackPair]
    validation: List[TrackPair]
    warnings: List[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.validation))


def split(pairs: Sequence[TrackPair], spec: Optional[SplitSpec] = None) -> SplitResult:
    """Seeded shuffle of the leading ``boundary`` tracks, then ``ratio`` of them to training."""
    spec = spec or SplitSpec()
    if not pairs:
        raise CorpusError('cannot split an empty track list')
    portion = list(pairs[:spec.boundary]) if spec.boundary is not None else list(pairs)
    if not portion:
        raise CorpusError(f'boundary {spec.boundary} leaves no tracks to split')
    n = len(portion)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(math.floor(spec.ratio * n + 0.5))
    train = sorted((portion[i] for i in order[:n_train]), key=lambda p: p.track_id)
    validation = sorted((portion[i] for i in order[n_train:]), key=lambda p: p.track_id)

    result = SplitResult(train=train, validation=validation)
    if not validation:
        msg = f'validation set is empty ({n} tracks, ratio {spec.ratio})'
        result.warnings.append(msg)
        logger.warning(msg)
    if not train:
        msg = f'training set is empty ({n} tracks, ratio {spec.ratio})'
        result.warnings.append(msg)
        logger.warning(msg)
    return result


def _trim(track_id: str, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if len(a) != len(b):
        n = min(len(a), len(b))
        logger.warning('Track %s: lengths %d and %d differ, trimming to %d', track_id, len(a), len(b), n)
        return a[:n], b[:n]
    return a, b


def build_segment_pairs(
    pairs: Sequence[TrackPair],
    stft_config: Optional[StftConfig] = None,
    segments: Optional[SegmentConfig] = None,
    target: str = 'tones',
    dtype=np.float64,
) -> Iterator[Tuple[str, SegmentBatch, SegmentBatch]]:
    """Yield ``(track_id, mixture segments, target segments)`` one track at a time."""
    stft_config = stft_config or StftConfig()
    segments = segments or SegmentConfig()
    for pair in pairs:
        if target not in pair.target_paths:
            raise CorpusError(f"track {pair.track_id} has no '{target}' source")
        mix = load_wav(pair.mixture_path)
        tgt = load_wav(pair.target_paths[target])
        mix_samples, tgt_samples = _trim(pair.track_id, mix.samples, tgt.samples)
        mix_mag = stft(Waveform(mix_samples, mix.sample_rate), stft_config, dtype).magnitude
        tgt_mag = stft(Waveform(tgt_samples, tgt.sample_rate), stft_config, dtype).magnitude
        mix_mag, tgt_mag = _trim(pair.track_id, mix_mag, tgt_mag)
        yield (
            pair.track_id,
            segment(mix_mag / segments.scale, segments.N, segments.stride_train),
            segment(tgt_mag / segments.scale, segments.N, segments.stride_train),
        )


def collect_segments(
    pairs: Sequence[TrackPair],
    stft_config: Optional[StftConfig] = None,
    segments: Optional[SegmentConfig] = None,
    target: str = 'tones',
    dtype=np.float64,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stack every track's segment pairs into ``(X, S)`` training arrays."""
    stft_config = stft_config or StftConfig()
    segments = segments or SegmentConfig()
    xs, ss = [], []
    for _, mix, tgt in build_segment_pairs(pairs, stft_config, segments, target, dtype):
        xs.append(mix.items)
        ss.append(tgt.items)
    if not xs:
        empty = np.zeros((0, 1, segments.N, stft_config.bins), dtype=dtype)
        return empty, empty.copy()
    return np.concatenate(xs), np.concatenate(ss)


def _envelope(rng: np.random.Generator, n: int, min_len: int, max_len: int) -> np.ndarray:
    length = int(rng.integers(min_len, max(min_len + 1, max_len)))
    length = min(length, n)
    onset = int(rng.integers(0, n - length + 1))
    env = np.zeros(n)
    env[onset:onset + length] = signal.windows.tukey(length, alpha=0.3)
    return env


def _harmonic_tones(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    for _ in range(int(rng.integers(3, 6))):
        f0 = rng.uniform(110.0, min(880.0, sr / 8))
        tone = np.zeros(n)
        for h in range(1, int(rng.integers(2, 6)) + 1):
            if h * f0 >= sr / 2:
                break
            tone += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
        out += rng.uniform(0.5, 1.0) * tone * _envelope(rng, n, sr // 2, n)
    return out


def _noise_bursts(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    out = np.zeros(n)
    for _ in range(int(rng.integers(3, 7))):
        low = rng.uniform(0.01, 0.1) * sr
        high = min(low * rng.uniform(1.5, 4.0), 0.45 * sr)
        sos = signal.butter(4, [low, high], btype='bandpass', fs=sr, output='sos')
        burst = signal.sosfilt(sos, rng.standard_normal(n))
        out += rng.uniform(0.5, 1.0) * burst * _envelope(rng, n, sr // 20, int(0.4 * sr))
    return out


def _normalize(x: np.ndarray, peak: float) -> np.ndarray:
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def make_synthetic(config: SynthConfig, root: Path) -> List[TrackPair]:
    """Write a seeded corpus of harmonic tones plus band-passed noise bursts.

    Stems are rounded to float32 before summing, so each mixture equals the sum
    of its stems exactly in the written files.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f'cannot create corpus directory {root}: {e}') from e

    sr = config.sample_rate
    n = int(round(config.duration * sr))
    pairs = []
    for i in range(config.num_tracks):
        rng = np.random.default_rng([config.seed, i])
        tones = _normalize(_harmonic_tones(rng, n, sr), 0.4).astype(np.float32)
        noise = _normalize(_noise_bursts(rng, n, sr), 0.3).astype(np.float32)
        mixture = tones + noise

        track_id = f'track{i:03d}'
        track_dir = root / track_id
        targets = {}
        for name, data in zip(SYNTH_SOURCES, (tones, noise)):
            targets[name] = write_wav(track_dir / f'{name}.wav', Waveform(data, sr))
        mixture_path = write_wav(track_dir / MIXTURE_FILE, Waveform(mixture, sr))
        pairs.append(TrackPair(track_id=track_id, mixture_path=mixture_path, target_paths=targets,
                               sample_rate=sr, num_samples=n))
    logger.info('Wrote %d synthetic tracks to %s', len(pairs), root)
    return pairs
