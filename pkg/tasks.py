"""Workflows behind the CLI: each function composes ``core`` into one job."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from core import (
    AnySpec,
    ConfigError,
    ConvNetworkSpec,
    CorpusReport,
    Model,
    RunConfig,
    TrackPair,
    TrainHistory,
    collect_segments,
    evaluate_corpus,
    get_builtin,
    init_model,
    load_checkpoint,
    load_wav,
    make_synthetic,
    resolve_dtype,
    scan_corpus,
    separate,
    split,
    train,
    write_reports,
    write_wav,
)

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = 'effective_config.json'


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a JSON config (or the defaults) and apply non-empty CLI overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ConfigError(f'config file not found: {path}') from e
        except json.JSONDecodeError as e:
            raise ConfigError(f'{path}: invalid JSON: {e}') from e
        if not isinstance(data, dict):
            raise ConfigError(f'{path}: top level must be a JSON object')
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f'invalid configuration:\n{e}') from e


def resolve_spec(config: RunConfig) -> AnySpec:
    """Builtin names are built for the configured segment geometry."""
    bins = config.stft.bins
    if isinstance(config.model, str):
        try:
            return get_builtin(config.model, frames=config.segments.N, bins=bins)
        except KeyError as e:
            raise ConfigError(str(e.args[0])) from e
    return config.model


def _check_geometry(spec: AnySpec, config: RunConfig) -> None:
    if isinstance(spec, ConvNetworkSpec):
        geometry = (spec.input_frames, spec.input_bins)
    else:
        geometry = (config.segments.N, spec.layer_widths[0])
    expected = (config.segments.N, config.stft.bins)
    if geometry != expected:
        raise ConfigError(f'model expects {geometry[0]}x{geometry[1]} segments, '
                          f'config produces {expected[0]}x{expected[1]}')


def write_effective_config(config: RunConfig, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / EFFECTIVE_CONFIG
    path.write_text(json.dumps(config.model_dump(mode='json'), indent=2, sort_keys=True) + '\n')
    return path


def synth_corpus(config: RunConfig) -> List[TrackPair]:
    root = Path(config.paths.corpus)
    pairs = make_synthetic(config.synth, root)
    write_effective_config(config, root)
    return pairs


@dataclass
class TrainOutcome:
    model: Model
    history: TrainHistory
    checkpoint_path: Path
    history_path: Path


def train_source(config: RunConfig, target: Optional[str] = None) -> TrainOutcome:
    """Train the network for one source; one call per source to separate."""
    target = target or config.sources.target
    if target not in config.sources.names:
        raise ConfigError(f"source '{target}' is not listed in sources.names")
    spec = resolve_spec(config)
    _check_geometry(spec, config)
    dtype = resolve_dtype(config.precision)

    scan = scan_corpus(Path(config.paths.corpus), config.sources.names)
    train_pairs, val_pairs = split(scan.pairs, config.split)
    logger.info('Training %s on %d tracks, validating on %d', target, len(train_pairs), len(val_pairs))
    train_set = collect_segments(train_pairs, config.stft, config.segments, target, dtype)
    val_set = collect_segments(val_pairs, config.stft, config.segments, target, dtype) if val_pairs else None

    out_dir = Path(config.paths.checkpoints)
    write_effective_config(config, out_dir)
    checkpoint_path = out_dir / f'{target}.ckpt'
    history_path = out_dir / f'{target}_history.csv'
    model = init_model(spec, seed=config.seed, precision=config.precision)
    model, history = train(model, train_set, val_set, config.train,
                           checkpoint_path=checkpoint_path, history_path=history_path)
    if history.best_epoch is not None:
        logger.info('Best epoch %d, checkpoint %s', history.best_epoch, checkpoint_path)
    return TrainOutcome(model=model, history=history, checkpoint_path=checkpoint_path, history_path=history_path)


def separate_file(config: RunConfig, checkpoint: Path, input_wav: Path, output_wav: Path) -> Path:
    model, metadata = load_checkpoint(checkpoint)
    logger.info('Loaded %s (epoch %s)', checkpoint, metadata.get('epoch', '?'))
    mixture = load_wav(input_wav)
    stft_config = config.stft.model_copy(update={'sample_rate': mixture.sample_rate})
    estimate = separate(model, mixture, stft_config, config.segments,
                        use_soft_mask=config.soft_mask, batch_size=config.train.batch_size)
    path = write_wav(output_wav, estimate)
    write_effective_config(config, Path(output_wav).parent)
    return path


def evaluate_dirs(
    config: RunConfig,
    estimates_dir: Path,
    references_dir: Path,
    out_dir: Optional[Path] = None,
    include_mixture: bool = True,
    workers: int = 1,
) -> Tuple[CorpusReport, List[Path]]:
    out_dir = Path(out_dir or config.paths.reports)
    report = evaluate_corpus(estimates_dir, references_dir, config.eval, config.sources,
                             include_mixture=include_mixture, workers=workers)
    if report.skipped:
        logger.warning('%d track(s) skipped during evaluation', len(report.skipped))
    written = write_reports(report, out_dir)
    written.append(write_effective_config(config, out_dir))
    return report, written
