"""Audio ingestion and features: WAV loading at a fixed 16 kHz contract,
log-mel spectrograms, per-video-frame mel windows, and an onset beat
detector.

Fixed constants: 16 kHz rate, FFT 800, hop 200, 80 mel bands on an HTK mel
scale spanning 0..8000 Hz, log floor 1e-5, and 16-frame (0.2 s) windows per
video frame.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import DimensionError, EmptyInputError, FormatError

RATE = 16000
FFT_SIZE = 800
HOP = 200
NUM_MEL = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5
WINDOW_FRAMES = 16  # mel frames per video-frame window (0.2 s)
MELS_PER_SECOND = RATE / HOP  # 80

# Detected beats sit where a sound newly enters the analysis window, i.e.
# near the window's trailing edge, so beat timestamps get a fixed
# half-window-plus-one-hop shift on top of the index * hop / rate conversion.
BEAT_OFFSET_S = (FFT_SIZE / 2 + HOP) / RATE


@dataclass(frozen=True)
class Waveform:
    """Mono float samples at 16 kHz, peak amplitude <= 1."""

    samples: np.ndarray
    rate: int = RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise DimensionError(f"samples must be 1-D, got shape {s.shape}")
        if s.size == 0:
            raise EmptyInputError("empty waveform")
        if not np.isfinite(s).all():
            raise ValueError("non-finite samples")
        if self.rate != RATE:
            raise ValueError(f"waveform rate must be {RATE}, got {self.rate}")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-amplitude mel frames, shape (F, 80)."""

    frames: np.ndarray
    rate: int = RATE
    hop: int = HOP
    fft_size: int = FFT_SIZE

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != NUM_MEL:
            raise DimensionError(f"frames must be (F, {NUM_MEL}), got shape {f.shape}")
        if not np.isfinite(f).all():
            raise ValueError("non-finite mel frames")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers() -> np.ndarray:
    """Center frequency (Hz) of each of the 80 mel bands."""
    pts = _mel_to_hz(np.linspace(_hz_to_mel(FMIN), _hz_to_mel(FMAX), NUM_MEL + 2))
    return pts[1:-1]


_FILTERBANK = None


def mel_filterbank() -> np.ndarray:
    """(80, 401) triangular filterbank on the HTK mel scale, unnormalized."""
    global _FILTERBANK
    if _FILTERBANK is None:
        pts = _mel_to_hz(np.linspace(_hz_to_mel(FMIN), _hz_to_mel(FMAX), NUM_MEL + 2))
        freqs = np.linspace(0.0, RATE / 2, FFT_SIZE // 2 + 1)
        lower = (freqs[None, :] - pts[:-2, None]) / (pts[1:-1, None] - pts[:-2, None])
        upper = (pts[2:, None] - freqs[None, :]) / (pts[2:, None] - pts[1:-1, None])
        _FILTERBANK = np.maximum(0.0, np.minimum(lower, upper))
    return _FILTERBANK


def ingest_wav(path) -> Waveform:
    """Load a PCM/float WAV of any supported depth, fold to mono, resample
    to 16 kHz, and scale down if the peak exceeds 1."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # non-audio chunks are harmless
            rate, data = scipy.io.wavfile.read(path)
    except Exception as e:
        raise FormatError(f"{path}: not a readable WAV file ({e})") from e
    if data.size == 0:
        raise EmptyInputError(f"{path}: WAV contains no samples")

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy widens 24-bit PCM into the high bytes of int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV sample dtype {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise FormatError(f"{path}: unsupported WAV layout with shape {x.shape}")

    if rate != RATE:
        if rate <= 0:
            raise FormatError(f"{path}: bad sample rate {rate}")
        g = np.gcd(RATE, int(rate))
        x = scipy.signal.resample_poly(x, RATE // g, int(rate) // g)

    peak = np.abs(x).max() if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return Waveform(samples=x)


def mel_spectrogram(wave: Waveform) -> MelSpectrogram:
    """Hann-windowed magnitude STFT -> mel filterbank -> log(max(., 1e-5)).

    No padding: F = 1 + floor((n - 800) / 200); audio shorter than one FFT
    window is an error.
    """
    x = wave.samples
    if x.size < FFT_SIZE:
        raise EmptyInputError(f"audio too short for one FFT window ({x.size} < {FFT_SIZE} samples)")
    frames = np.lib.stride_tricks.sliding_window_view(x, FFT_SIZE)[::HOP]
    win = scipy.signal.get_window("hann", FFT_SIZE, fftbins=True)
    spec = np.abs(np.fft.rfft(frames * win, axis=1))
    mel = spec @ mel_filterbank().T
    return MelSpectrogram(frames=np.log(np.maximum(mel, LOG_FLOOR)))


def frame_windows(mel: MelSpectrogram, num_frames: int, fps: float = 25.0) -> np.ndarray:
    """One 16x80 mel window per video frame, shape (num_frames, 16, 80).

    Frame i is centered at mel index round(i / fps * 80); rows outside the
    spectrogram are clamped to the first/last mel frame.
    """
    if num_frames <= 0:
        raise EmptyInputError("num_frames must be positive")
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    f = mel.frames
    out = np.empty((num_frames, WINDOW_FRAMES, NUM_MEL), dtype=f.dtype)
    half = WINDOW_FRAMES // 2
    for i in range(num_frames):
        center = int(np.floor(i / fps * MELS_PER_SECOND + 0.5))
        idx = np.clip(np.arange(center - half, center + half), 0, f.shape[0] - 1)
        out[i] = f[idx]
    return out


def audio_beats(mel: MelSpectrogram) -> np.ndarray:
    """Onset-energy beat times in seconds, strictly increasing.

    Onset envelope: per-transition sum of positive first differences of the
    log-mel frames.  Peaks must exceed mean + 1 std of the envelope; peaks
    closer than 100 ms keep only the larger one.
    """
    f = mel.frames
    if f.shape[0] < 2:
        return np.empty(0, dtype=np.float64)
    env = np.maximum(np.diff(f, axis=0), 0.0).sum(axis=1)
    thr = env.mean() + env.std()
    peaks = [j for j in range(1, env.size - 1)
             if env[j] > thr and env[j] > env[j - 1] and env[j] >= env[j + 1]]
    peaks.sort(key=lambda j: (-env[j], j))
    kept: list[int] = []
    min_gap = 0.1 * RATE / HOP
    for j in peaks:
        if all(abs(j - k) >= min_gap for k in kept):
            kept.append(j)
    times = np.array(sorted((j + 1) * HOP / RATE + BEAT_OFFSET_S for j in kept), dtype=np.float64)
    return times
