"""BSS-eval SDR/SIR/SAR and paired significance testing across models."""
import csv
import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import linalg, stats
from scipy.signal import fftconvolve

from .audio import Waveform, load_wav
from .dataset import scan_corpus
from .errors import ShapeError
from .schemas import BssConfig, EvalResult, SourcesConfig, TrackPair

logger = logging.getLogger(__name__)

METRICS = ('sdr', 'sir', 'sar')
MIXTURE_MODEL = 'mix'
# exact null distribution up to this many non-zero differences
EXACT_MAX_N = 20
_ENERGY_FLOOR = 1e-12


def _samples(x: Union[Waveform, np.ndarray]) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def _solve(G: np.ndarray, D: np.ndarray, flags: List[str]) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter('error', linalg.LinAlgWarning)
            return linalg.solve(G, D, assume_a='sym')
    except (linalg.LinAlgError, linalg.LinAlgWarning):
        if 'ridge' not in flags:
            flags.append('ridge')
        logger.warning('ill-conditioned projection, falling back to ridge least squares')
        ridge = _ENERGY_FLOOR * max(np.trace(G), np.finfo(float).tiny)
        return linalg.lstsq(G + ridge * np.eye(len(G)), D)[0]


def _decompose(est: np.ndarray, refs: np.ndarray, j: int, L: int, flags: List[str]):
    """Least-squares projections of ``est`` onto delayed references.

    Returns ``s_target`` (span of target delays 0..L-1), ``p_all`` (span of all
    references' delays) and the estimate, all zero-padded to n + L - 1.
    """
    nsrc, n = refs.shape
    n_fft = sp_fft.next_fast_len(n + L - 1, real=True)
    rf = sp_fft.rfft(refs, n=n_fft, axis=-1)
    ef = sp_fft.rfft(est, n=n_fft)

    # G[(i,t1),(k,t2)] = sum_s ref_i[s] ref_k[s + t1 - t2]
    G = np.empty((nsrc * L, nsrc * L))
    for i, k in itertools.product(range(nsrc), repeat=2):
        c = sp_fft.irfft(np.conj(rf[i]) * rf[k], n=n_fft)
        G[i * L:(i + 1) * L, k * L:(k + 1) * L] = linalg.toeplitz(c[:L], np.r_[c[0], c[-1:-L:-1]])
    D = np.concatenate([sp_fft.irfft(np.conj(rf[i]) * ef, n=n_fft)[:L] for i in range(nsrc)])

    def project(indices, coeffs):
        out = np.zeros(n + L - 1)
        for pos, i in enumerate(indices):
            out += fftconvolve(coeffs[pos * L:(pos + 1) * L], refs[i])
        return out

    block = slice(j * L, (j + 1) * L)
    s_target = project([j], _solve(G[block, block], D[block], flags))
    p_all = project(range(nsrc), _solve(G, D, flags))
    return s_target, p_all, np.pad(est, (0, L - 1))


def _ratio_db(num: float, den: float, floor: float, cap: float) -> float:
    if den < floor:
        return cap
    if num <= 0:
        return -cap
    return float(np.clip(10 * np.log10(num / den), -cap, cap))


def bss_eval(
    estimate: Union[Waveform, np.ndarray],
    references: Sequence[Union[Waveform, np.ndarray]],
    target_index: int = 0,
    config: Optional[BssConfig] = None,
) -> EvalResult:
    config = config or BssConfig()
    est = _samples(estimate)
    refs = np.stack([_samples(r) for r in references])
    if refs.shape[1] != est.shape[0]:
        raise ShapeError(f'estimate has {est.shape[0]} samples, references have {refs.shape[1]}')
    if not 0 <= target_index < len(refs):
        raise IndexError(f'target index {target_index} out of range for {len(refs)} references')

    cap = config.cap_db
    energy = float(np.dot(est, est))
    if energy == 0:
        return EvalResult(sdr=-cap, sir=-cap, sar=-cap, flags=['silent_estimate'])

    flags: List[str] = []
    s_target, p_all, est_pad = _decompose(est, refs, target_index, config.filter_len, flags)
    e_interf = p_all - s_target
    e_artif = est_pad - p_all
    floor = _ENERGY_FLOOR * energy
    target_energy = float(np.dot(s_target, s_target))
    sdr = _ratio_db(target_energy, float(np.sum((e_interf + e_artif) ** 2)), floor, cap)
    sir = _ratio_db(target_energy, float(np.dot(e_interf, e_interf)), floor, cap)
    sar = _ratio_db(float(np.sum((s_target + e_interf) ** 2)), float(np.dot(e_artif, e_artif)), floor, cap)
    return EvalResult(sdr=sdr, sir=sir, sar=sar, flags=flags)


def _null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments reaching each value of 2·W⁺."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value of the paired signed-rank test on ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError('wilcoxon_signed_rank needs two equal-length non-empty sequences')
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0

    ranks = stats.rankdata(np.abs(d))  # mid-ranks for ties
    w = min(ranks[d > 0].sum(), ranks[d < 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _null_counts(doubled)
        tail = counts[:int(round(2 * w)) + 1].sum()
        return float(min(1.0, 2.0 * tail / 2.0 ** n))

    _, ties = np.unique(np.abs(d), return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties ** 3 - ties) / 48.0
    z = (abs(w - mean) - 0.5) / np.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))


def bonferroni(p_values, m: int):
    if m < 1:
        raise ValueError(f'number of comparisons must be at least 1, got {m}')
    adjusted = np.minimum(1.0, m * np.asarray(p_values, dtype=np.float64))
    return float(adjusted) if adjusted.ndim == 0 else adjusted


@dataclass
class TrackScore:
    track_id: str
    model: str
    result: EvalResult


@dataclass
class Comparison:
    model_a: str
    model_b: str
    metric: str
    n: int
    p_raw: float
    p_adjusted: float


@dataclass
class CorpusReport:
    scores: List[TrackScore] = field(default_factory=list)
    comparisons: List[Comparison] = field(default_factory=list)
    summary: Dict[Tuple[str, str], Dict[str, float]] = field(default_factory=dict)
    skipped: List[Tuple[str, str, str]] = field(default_factory=list)

    def values(self, model: str, metric: str) -> Dict[str, float]:
        return {s.track_id: getattr(s.result, metric) for s in self.scores if s.model == model}


def box_stats(values: Sequence[float]) -> Dict[str, float]:
    """Quartiles, median and 1.5·IQR whiskers clipped to the data."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, median, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    low = v[v >= q1 - 1.5 * iqr].min()
    high = v[v <= q3 + 1.5 * iqr].max()
    return {
        'count': float(len(v)), 'min': float(v[0]), 'whisker_low': float(low), 'q1': float(q1),
        'median': float(median), 'q3': float(q3), 'whisker_high': float(high), 'max': float(v[-1]),
        'mean': float(v.mean()),
    }


def _load_references(pair: TrackPair, sources: SourcesConfig) -> List[np.ndarray]:
    """Target first, then the remaining sources in configured order."""
    order = [sources.target] + [s for s in sources.names if s != sources.target]
    return [load_wav(pair.target_paths[name]).samples for name in order]


def _score_track(est_path: Path, pair: TrackPair, sources: SourcesConfig, config: BssConfig) -> EvalResult:
    refs = _load_references(pair, sources)
    est = load_wav(est_path).samples
    n = min([len(est)] + [len(r) for r in refs])
    if any(len(x) != n for x in [est] + refs):
        logger.warning('%s: trimming estimate/references to %d samples', pair.track_id, n)
    return bss_eval(est[:n], [r[:n] for r in refs], 0, config)


def evaluate_corpus(
    estimates_dir: Path,
    references_dir: Path,
    config: Optional[BssConfig] = None,
    sources: Optional[SourcesConfig] = None,
    include_mixture: bool = True,
    workers: int = 1,
) -> CorpusReport:
    """Score ``estimates_dir/<model>/<track>.wav`` against a reference corpus.

    The unprocessed mixture is scored as pseudo-model ``mix`` when asked; it is
    reported but left out of the significance tests.
    """
    config = config or BssConfig()
    sources = sources or SourcesConfig()
    estimates_dir, references_dir = Path(estimates_dir), Path(references_dir)
    scan = scan_corpus(references_dir, sources.names)
    report = CorpusReport(skipped=[('*', t, reason) for t, reason in scan.skipped])

    models = sorted(p.name for p in estimates_dir.iterdir() if p.is_dir()) if estimates_dir.is_dir() else []
    jobs: List[Tuple[str, TrackPair, Path]] = []
    for model in models:
        for pair in scan.pairs:
            est_path = estimates_dir / model / f'{pair.track_id}.wav'
            if est_path.exists():
                jobs.append((model, pair, est_path))
            else:
                report.skipped.append((model, pair.track_id, 'missing estimate'))
    if include_mixture:
        jobs.extend((MIXTURE_MODEL, pair, pair.mixture_path) for pair in scan.pairs)

    def run(job) -> Union[TrackScore, str]:
        model, pair, path = job
        try:
            return TrackScore(pair.track_id, model, _score_track(path, pair, sources, config))
        except Exception as e:
            logger.exception('Scoring %s/%s failed: %s', model, pair.track_id, e)
            return str(e)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(run, jobs))
    # job order, whatever order the workers finish in
    for (model, pair, _), outcome in zip(jobs, outcomes):
        if isinstance(outcome, TrackScore):
            report.scores.append(outcome)
        else:
            report.skipped.append((model, pair.track_id, outcome))

    # significance after every track is in
    pairs = list(itertools.combinations(models, 2))
    for metric in METRICS:
        for model_a, model_b in pairs:
            va, vb = report.values(model_a, metric), report.values(model_b, metric)
            common = sorted(set(va) & set(vb))
            if not common:
                continue
            p = wilcoxon_signed_rank([va[t] for t in common], [vb[t] for t in common])
            report.comparisons.append(Comparison(model_a, model_b, metric, len(common), p, bonferroni(p, len(pairs))))

    for model in models + ([MIXTURE_MODEL] if include_mixture else []):
        for metric in METRICS:
            vals = list(report.values(model, metric).values())
            if vals:
                report.summary[(model, metric)] = box_stats(vals)
    return report


def write_reports(report: CorpusReport, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / 'metrics.csv'
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['track', 'model', 'sdr_db', 'sir_db', 'sar_db'])
        for s in sorted(report.scores, key=lambda s: (s.track_id, s.model)):
            w.writerow([s.track_id, s.model, f'{s.result.sdr:.4f}', f'{s.result.sir:.4f}', f'{s.result.sar:.4f}'])
    written.append(path)

    path = out_dir / 'significance.csv'
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['model_a', 'model_b', 'metric', 'n', 'p_raw', 'p_adjusted'])
        for c in report.comparisons:
            w.writerow([c.model_a, c.model_b, c.metric, c.n, f'{c.p_raw:.6g}', f'{c.p_adjusted:.6g}'])
    written.append(path)

    path = out_dir / 'summary.csv'
    keys = ['count', 'min', 'whisker_low', 'q1', 'median', 'q3', 'whisker_high', 'max', 'mean']
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['model', 'metric'] + keys)
        for (model, metric), st in sorted(report.summary.items()):
            w.writerow([model, metric] + [f'{st[k]:.4f}' for k in keys])
    written.append(path)

    path = out_dir / 'skipped.csv'
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['model', 'track', 'reason'])
        w.writerows(report.skipped)
    written.append(path)
    return written
