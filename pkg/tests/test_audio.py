import numpy as np
import pytest
from scipy.io import wavfile

from core.audio import (
    Spectrogram,
    Waveform,
    desegment,
    istft,
    load_wav,
    segment,
    separate,
    soft_mask,
    stft,
    write_wav,
)
from core.errors import ShapeError, StftParameterError, WavFormatError, WavIOError
from core.network import init_model, scale_spec, toy_spec
from core.schemas import MlpSpec, SegmentConfig, StftConfig

SMALL_STFT = StftConfig(window=256, hop=64, fft=256, bins=129, sample_rate=8000)


def _snr_db(reference, estimate):
    return 10 * np.log10(np.sum(reference ** 2) / np.sum((reference - estimate) ** 2))


@pytest.mark.parametrize('dtype, floor_db', [(np.float64, 120.0), (np.float32, 60.0)])
@pytest.mark.parametrize('seconds', [1.0, 2.7])
def test_stft_round_trip_interior(rng, dtype, floor_db, seconds):
    config = StftConfig()
    x = rng.uniform(-1, 1, size=int(seconds * config.sample_rate))
    spec = stft(Waveform(x, config.sample_rate), config, dtype=dtype)
    assert spec.frames.shape[1] == 1025
    y = istft(spec).samples
    assert len(y) == len(x)
    covered = config.window + (spec.num_frames - 1) * config.hop
    interior = slice(config.window, covered - config.window)
    assert _snr_db(x[interior], y[interior]) >= floor_db


def test_zero_signal_has_zero_magnitude():
    spec = stft(Waveform(np.zeros(44100), 44100))
    assert spec.num_frames > 1
    assert not spec.magnitude.any()


def test_sinusoid_on_a_bin_peaks_there():
    config = StftConfig()
    t = np.arange(2 * config.sample_rate) / config.sample_rate
    x = np.sin(2 * np.pi * (100 * config.sample_rate / config.fft) * t)
    peaks = np.argmax(stft(Waveform(x, config.sample_rate), config).magnitude, axis=1)
    assert set(peaks.tolist()) == {100}


def test_short_signal_is_padded_and_flagged(rng):
    spec = stft(Waveform(rng.standard_normal(1000), 44100))
    assert spec.padded
    assert spec.num_frames == 1
    assert len(istft(spec)) == 1000


def test_istft_rejects_hop_larger_than_window():
    config = StftConfig(window=256, hop=512, fft=256, bins=129)
    spec = Spectrogram(frames=np.zeros((3, 129), dtype=complex), config=config, num_samples=1280)
    with pytest.raises(StftParameterError):
        istft(spec)


def test_segment_counts_and_padding(rng):
    mag = rng.uniform(size=(150, 8))
    batch = segment(mag, 15, 15)
    assert len(batch) == 10
    assert batch.items.shape == (10, 1, 15, 8)

    batch = segment(rng.uniform(size=(20, 8)), 15, 15)
    assert batch.offsets == [0, 15]
    assert not batch.items[1, 0, 5:].any()


@pytest.mark.parametrize('frames, stride', [(150, 15), (37, 15), (37, 5), (4, 15)])
def test_desegment_inverts_segment(rng, frames, stride):
    mag = rng.uniform(size=(frames, 6))
    np.testing.assert_allclose(desegment(segment(mag, 15, stride)), mag)


def test_segment_rejects_empty():
    with pytest.raises(ShapeError):
        segment(np.zeros((0, 4)), 15, 15)


def test_wav_float32_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, size=500).astype(np.float32)
    path = write_wav(tmp_path / 'a.wav', Waveform(x, 22050))
    loaded = load_wav(path)
    assert loaded.sample_rate == 22050
    np.testing.assert_array_equal(loaded.samples, x.astype(np.float64))


def test_wav_pcm16_quantization(tmp_path, rng):
    x = rng.uniform(-0.9, 0.9, size=500)
    loaded = load_wav(write_wav(tmp_path / 'a.wav', Waveform(x, 8000), subtype='pcm16'))
    assert np.max(np.abs(loaded.samples - x)) <= 0.5 / 32768 + 1e-12


def test_stereo_is_averaged(tmp_path):
    data = np.array([[1000, 3000], [-2000, 0]], dtype=np.int16)
    wavfile.write(tmp_path / 's.wav', 8000, data)
    np.testing.assert_allclose(load_wav(tmp_path / 's.wav').samples, [2000 / 32768, -1000 / 32768])


def test_non_riff_file_names_chunk(tmp_path):
    path = tmp_path / 'x.wav'
    path.write_bytes(b'RIFX' + b'\x00' * 40)
    with pytest.raises(WavFormatError) as err:
        load_wav(path)
    assert err.value.chunk_id == 'RIFX'
    assert 'RIFX' in str(err.value)


def test_unsupported_sample_format(tmp_path):
    wavfile.write(tmp_path / 'u8.wav', 8000, np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / 'u8.wav')


def test_truncated_and_missing_files(tmp_path, rng):
    path = write_wav(tmp_path / 'a.wav', Waveform(rng.standard_normal(400), 8000))
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(WavIOError):
        load_wav(path)
    with pytest.raises(WavIOError):
        load_wav(tmp_path / 'missing.wav')


def test_soft_mask_bounds(rng):
    mixture = rng.uniform(size=(5, 4))
    estimate = rng.uniform(size=(5, 4)) * mixture
    masked = soft_mask(estimate, mixture)
    assert (masked >= 0).all() and (masked <= mixture + 1e-12).all()


def _identity_model(bins):
    model = init_model(MlpSpec(layer_widths=[bins, bins]), seed=0, precision='f64')
    model.set_parameters([np.eye(bins), np.zeros(bins)])
    return model


def test_separate_identity_reconstructs_mixture(rng):
    x = rng.uniform(-0.5, 0.5, size=3001)
    out = separate(_identity_model(129), Waveform(x, 8000), SMALL_STFT, SegmentConfig())
    assert out.sample_rate == 8000
    np.testing.assert_allclose(out.samples, x, atol=1e-9)


def test_separate_keeps_length_and_rate(rng):
    model = init_model(scale_spec(toy_spec(), 15, 129), seed=0, precision='f32')
    mixture = Waveform(rng.uniform(-0.5, 0.5, size=5000), 8000)
    out = separate(model, mixture, SMALL_STFT, SegmentConfig(), use_soft_mask=True)
    assert len(out) == 5000
    assert out.sample_rate == 8000
    assert np.all(np.isfinite(out.samples))


def test_separate_rejects_mismatched_bins():
    with pytest.raises(ShapeError):
        separate(_identity_model(33), Waveform(np.zeros(3000), 8000), SMALL_STFT)
