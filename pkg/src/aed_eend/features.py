"""Log-mel front end: 23 mel bins, 25 ms / 10 ms framing, +-7 frame
splicing and x10 subsampling, giving 345-dim vectors every 100 ms."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import InputError

ENERGY_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate not in (8000, 16000):
            raise InputError(f"unsupported sample rate {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_shift_s: float = 0.1

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise InputError(f"features must be T x F, got shape {self.frames.shape}")
        if self.frame_shift_s <= 0:
            raise InputError("frame_shift_s must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file, scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise InputError(f"{path}: expected mono 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale over [0, Nyquist].

    Returns an ``n_mels x (n_fft // 2 + 1)`` weight matrix.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def num_frames(n_samples: int, win: int, hop: int) -> int:
    # frames overrunning the signal are dropped
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def log_mel(w: Waveform, n_mels: int = 23, win_s: float = 0.025,
            hop_s: float = 0.010) -> np.ndarray:
    """Log mel-filterbank energies, one row per hop."""
    if w.samples.size == 0:
        raise InputError("empty waveform")
    win = int(round(win_s * w.sample_rate))
    hop = int(round(hop_s * w.sample_rate))
    n = num_frames(w.samples.size, win, hop)
    if n == 0:
        raise InputError(f"waveform shorter than one {win}-sample window")
    n_fft = 1 << (win - 1).bit_length()
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    frames = w.samples[idx] * np.hanning(win)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(n_mels, n_fft, w.sample_rate).T
    return np.log(energies + ENERGY_FLOOR)


def splice_subsample(m: np.ndarray, context: int = 7, factor: int = 10,
                     hop_s: float = 0.010) -> FeatureSequence:
    """Stack +-context neighbours (edges replicated), then keep every factor-th frame."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise InputError("splice_subsample needs at least one frame")
    t0 = m.shape[0]
    keep = np.arange(0, t0, factor)
    offsets = np.arange(-context, context + 1)
    src = np.clip(keep[:, None] + offsets[None, :], 0, t0 - 1)
    out = m[src].reshape(keep.size, -1)
    return FeatureSequence(out, frame_shift_s=hop_s * factor)


def cmvn(frames: np.ndarray) -> np.ndarray:
    """Per-utterance mean and variance normalisation."""
    mu = frames.mean(axis=0)
    sd = frames.std(axis=0)
    return (frames - mu) / np.where(sd > 0, sd, 1.0)


def extract_features(w: Waveform, n_mels: int = 23, context: int = 7,
                     factor: int = 10, normalize: bool = False) -> FeatureSequence:
    feats = splice_subsample(log_mel(w, n_mels=n_mels), context=context, factor=factor)
    if normalize:
        feats.frames = cmvn(feats.frames)
    return feats
