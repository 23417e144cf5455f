import itertools
import shutil

import numpy as np
import pytest
from scipy import stats

from core.dataset import make_synthetic
from core.errors import ShapeError
from core.evaluation import (
    MIXTURE_MODEL,
    bonferroni,
    box_stats,
    bss_eval,
    evaluate_corpus,
    wilcoxon_signed_rank,
    write_reports,
)
from core.schemas import BssConfig, SynthConfig

CONFIG = BssConfig(filter_len=32)
CAP = CONFIG.cap_db


@pytest.fixture
def sources(rng):
    return rng.standard_normal(4000), rng.standard_normal(4000)


def test_estimate_equal_to_target_is_capped(sources):
    s1, s2 = sources
    result = bss_eval(s1, [s1, s2], 0, CONFIG)
    assert (result.sdr, result.sir, result.sar) == (CAP, CAP, CAP)


def test_scaled_target_is_capped(sources):
    s1, s2 = sources
    result = bss_eval(0.5 * s1, [s1, s2], 0, CONFIG)
    assert result.sdr == CAP


def test_orthogonal_sources_closed_form(rng):
    n, gap = 2200, 100
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    s1[:1000] = rng.standard_normal(1000)
    s2[1000 + gap:] = rng.standard_normal(n - 1000 - gap)
    s1 /= np.linalg.norm(s1)
    s2 /= np.linalg.norm(s2)
    result = bss_eval(s1 + 0.1 * s2, [s1, s2], 0, CONFIG)
    assert result.sir == pytest.approx(20.0, abs=0.1)
    assert result.sdr == pytest.approx(20.0, abs=0.1)
    assert result.sar == CAP


def test_gain_invariance_and_ordering(rng, sources):
    s1, s2 = sources
    estimate = s1 + 0.3 * s2 + 0.2 * rng.standard_normal(4000)
    base = bss_eval(estimate, [s1, s2], 0, CONFIG)
    scaled = bss_eval(2.5 * estimate, [s1, s2], 0, CONFIG)
    for metric in ('sdr', 'sir', 'sar'):
        assert getattr(scaled, metric) == pytest.approx(getattr(base, metric), abs=1e-9)
    assert base.sdr <= base.sir
    assert base.sdr < CAP


def test_projection_is_idempotent(rng, sources):
    s1, s2 = sources
    s1 = s1.copy()
    s1[-CONFIG.filter_len:] = 0.0
    # a short filtering of the target lies inside the allowed distortion class
    filtered = np.convolve(s1, rng.standard_normal(8))[:4000]
    result = bss_eval(filtered, [s1, s2], 0, CONFIG)
    assert (result.sdr, result.sir, result.sar) == (CAP, CAP, CAP)


def test_silent_estimate(sources):
    s1, s2 = sources
    result = bss_eval(np.zeros(4000), [s1, s2], 0, CONFIG)
    assert (result.sdr, result.sir, result.sar) == (-CAP, -CAP, -CAP)
    assert 'silent_estimate' in result.flags


def test_rank_deficient_references_are_flagged(sources):
    s1, _ = sources
    result = bss_eval(s1, [s1, np.zeros(4000)], 0, CONFIG)
    assert 'ridge' in result.flags
    assert np.isfinite([result.sdr, result.sir, result.sar]).all()


def test_length_mismatch(sources):
    s1, s2 = sources
    with pytest.raises(ShapeError):
        bss_eval(s1[:100], [s1, s2], 0, CONFIG)


def brute_force_p(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = d[d != 0]
    if len(d) == 0:
        return 1.0
    ranks = stats.rankdata(np.abs(d))
    w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        if np.dot(signs, ranks) <= w + 1e-9:
            hits += 1
    return min(1.0, 2.0 * hits / 2 ** len(d))


def test_wilcoxon_identical_samples():
    assert wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0


def test_wilcoxon_five_positive_differences():
    assert wilcoxon_signed_rank([1.1, 2.2, 3.3, 4.4, 5.5], [0, 0, 0, 0, 0]) == pytest.approx(0.0625, abs=1e-15)


def test_wilcoxon_matches_enumeration(rng):
    for n in range(1, 13):
        for _ in range(3):
            a = rng.standard_normal(n)
            # rounding creates ties and zero differences
            b = np.round(a + rng.standard_normal(n), 1) if n % 2 else a + rng.standard_normal(n)
            a = np.round(a, 1) if n % 2 else a
            assert abs(wilcoxon_signed_rank(a, b) - brute_force_p(a, b)) <= 1e-12


def test_wilcoxon_is_symmetric(rng):
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    assert wilcoxon_signed_rank(a, b) == wilcoxon_signed_rank(b, a)


def test_wilcoxon_normal_approximation(rng):
    a = rng.standard_normal(40)
    b = a + 0.3 + rng.standard_normal(40)
    expected = stats.wilcoxon(a, b, zero_method='wilcox', correction=True, method='approx').pvalue
    assert wilcoxon_signed_rank(a, b) == pytest.approx(expected, rel=1e-9)


def test_wilcoxon_rejects_unpaired():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([], [])


def test_bonferroni():
    assert bonferroni(0.01, 3) == pytest.approx(0.03)
    assert bonferroni(0.5, 3) == 1.0
    assert bonferroni(0.2, 1) == 0.2
    np.testing.assert_allclose(bonferroni([0.01, 0.4], 3), [0.03, 1.0])
    with pytest.raises(ValueError):
        bonferroni(0.1, 0)


def test_box_stats():
    st = box_stats([1.0, 2.0, 3.0, 4.0, 100.0])
    assert st['median'] == 3.0
    assert st['q1'] == 2.0 and st['q3'] == 4.0
    assert st['whisker_high'] == 4.0
    assert st['max'] == 100.0


@pytest.fixture
def small_corpus(tmp_path):
    root = tmp_path / 'corpus'
    pairs = make_synthetic(SynthConfig(num_tracks=2, duration=1.0, sample_rate=8000, seed=3), root)
    return root, pairs


def _write_estimates(root, model, pairs, skip=()):
    (root / model).mkdir(parents=True)
    for pair in pairs:
        if pair.track_id not in skip:
            shutil.copy(pair.target_paths['tones'], root / model / f'{pair.track_id}.wav')


def test_evaluate_corpus_oracle_estimates(tmp_path, small_corpus):
    root, pairs = small_corpus
    estimates = tmp_path / 'estimates'
    for model in ('dnn', 'fcnn', 'mr-fcnn'):
        _write_estimates(estimates, model, pairs)

    report = evaluate_corpus(estimates, root, BssConfig(filter_len=16), workers=2)
    oracle = [s for s in report.scores if s.model != MIXTURE_MODEL]
    assert len(oracle) == 6
    assert all(s.result.sdr == 300.0 for s in oracle)
    assert {s.model for s in report.scores} == {'dnn', 'fcnn', 'mr-fcnn', MIXTURE_MODEL}

    # three models -> three pairs per metric, identical outputs -> p = 1
    assert len(report.comparisons) == 9
    assert all(c.p_raw == 1.0 and c.p_adjusted == 1.0 for c in report.comparisons)
    assert ('mr-fcnn', 'sdr') in report.summary

    written = write_reports(report, tmp_path / 'reports')
    metrics = written[0].read_text().splitlines()
    assert metrics[0] == 'track,model,sdr_db,sir_db,sar_db'
    assert len(metrics) == 1 + 8
    assert written[1].read_text().splitlines()[0] == 'model_a,model_b,metric,n,p_raw,p_adjusted'


def test_evaluate_corpus_reports_missing_tracks(tmp_path, small_corpus):
    root, pairs = small_corpus
    estimates = tmp_path / 'estimates'
    _write_estimates(estimates, 'fcnn', pairs, skip={pairs[1].track_id})
    report = evaluate_corpus(estimates, root, BssConfig(filter_len=16), include_mixture=False)
    assert [s.track_id for s in report.scores] == [pairs[0].track_id]
    assert report.skipped == [('fcnn', pairs[1].track_id, 'missing estimate')]
    assert report.comparisons == []


def test_failed_tracks_keep_job_order_with_workers(tmp_path, small_corpus):
    root, pairs = small_corpus
    estimates = tmp_path / 'estimates'
    for model in ('a', 'b', 'c'):
        (estimates / model).mkdir(parents=True)
        for pair in pairs:
            (estimates / model / f'{pair.track_id}.wav').write_bytes(b'not a wav file')

    runs = []
    for run in ('first', 'second'):
        report = evaluate_corpus(estimates, root, BssConfig(filter_len=16), include_mixture=False, workers=4)
        assert report.scores == []
        assert [(m, t) for m, t, _ in report.skipped] == [(m, p.track_id) for m in 'abc' for p in pairs]
        runs.append(write_reports(report, tmp_path / run)[-1].read_bytes())
    assert runs[0] == runs[1]
