"""Iterative enrollment-based decoding.

The model is first run with only the three speech-type tokens to find
single-speaker frames. Speakers are then added one at a time: each
iteration looks at the single-speaker frames not yet claimed by an enrolled
speaker, picks an enrollment window there with one of the strategies
below, and re-runs the decoder with all enrollments collected so far.
Decoding stops once the longest unclaimed single-speaker stretch is shorter
than ``L_stop`` frames.

Strategies: ``init`` (first frames of the first long-enough segment),
``rand`` (random window of a random segment), ``sc`` (random window of the
biggest spectral cluster) and ``gt`` (windows cut from reference labels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import spectral_cluster
from .errors import ContractError, InputError
from .numerics import Tensor
from .model import (
    N_TYPES,
    Parameters,
    build_enrollment,
    encode,
    extract_enrollment,
    forward_diarize,
    median_filter_rows,
)
from .train import single_speaker_mask

STRATEGIES = ("gt", "init", "rand", "sc")


@dataclass
class DecodeConfig:
    L_enroll: int = 5
    L_stop: int = 10
    threshold: float = 0.5
    strategy: str = "sc"
    oracle_num_speakers: int | None = None
    max_speakers: int = 10
    seed: int = 0
    k_max: int = 10
    median_width: int = 1  # 1 disables the median filter

    def validate(self) -> None:
        if self.L_enroll < 1 or self.L_stop < 1:
            raise InputError("L_enroll and L_stop must be >= 1")
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.oracle_num_speakers is not None and self.oracle_num_speakers < 0:
            raise InputError("oracle_num_speakers must be >= 0")
        if self.max_speakers < 1:
            raise InputError("max_speakers must be >= 1")
        if self.median_width < 1 or self.median_width % 2 == 0:
            raise InputError("median_width must be a positive odd number")


# --------------------------------------------------------------------------
# segment plumbing


def contiguous_segments(I) -> list[np.ndarray]:
    """Split a strictly increasing index list into maximal consecutive runs."""
    I = np.asarray(I, dtype=np.int64).reshape(-1)
    if I.size == 0:
        return []
    if np.any(np.diff(I) <= 0):
        raise ContractError("index list must be strictly increasing")
    breaks = np.flatnonzero(np.diff(I) != 1) + 1
    return np.split(I, breaks)


def filter_segs(C, L: int) -> list[np.ndarray]:
    return [seg for seg in C if len(seg) >= L]


def longest_segment(C):
    """First segment of maximal length, or None for an empty list."""
    best = None
    for seg in C:
        if best is None or len(seg) > len(best):
            best = seg
    return best


def enrollment_length(longest_len: int, L_enroll: int) -> int:
    return min(longest_len, L_enroll)


def should_stop(longest_len: int, L_stop: int) -> bool:
    return L_stop > longest_len


def _window(seq: np.ndarray, length: int, rng) -> np.ndarray:
    start = int(rng.integers(len(seq) - length + 1))
    return seq[start:start + length]


def select_enrollment(strategy: str, C_prime, I, E, L_tmp: int, rng, k_max: int = 10) -> np.ndarray:
    """Frame indexes to average into the next speaker's enrollment vector."""
    if not C_prime:
        raise ContractError("select_enrollment needs at least one candidate segment")
    if L_tmp < 1:
        raise ContractError("L_tmp must be >= 1")
    assert any(len(seg) >= L_tmp for seg in C_prime)
    if strategy == "init":
        return np.asarray(C_prime[0][:L_tmp])
    if strategy == "rand":
        seg = C_prime[int(rng.integers(len(C_prime)))]
        assert len(seg) >= L_tmp
        return _window(np.asarray(seg), L_tmp, rng)
    if strategy == "sc":
        I = np.asarray(I, dtype=np.int64)
        emb = E.data if isinstance(E, Tensor) else np.asarray(E)
        labels = spectral_cluster(emb[I], k_max=k_max)
        sizes = np.bincount(labels)
        members = np.sort(I[labels == int(np.argmax(sizes))])
        if len(members) < L_tmp:
            return members
        return _window(members, L_tmp, rng)
    raise ContractError(f"select_enrollment does not handle strategy {strategy!r}")


# --------------------------------------------------------------------------
# decoding


def predict_speech_types(x, p: Parameters, cfg: DecodeConfig):
    """Run with the type tokens only; returns (I_non, I_sgl, I_ovl, E).

    The three lists come from independent sigmoids and may overlap; only
    I_sgl drives decoding.
    """
    E = encode(x, p)
    _, binary = forward_diarize(None, build_enrollment(p, []), p, cfg.threshold, E=E)
    I_non, I_sgl, I_ovl = (np.flatnonzero(binary[i]) for i in range(N_TYPES))
    return I_non, I_sgl, I_ovl, E


@dataclass
class DecodeResult:
    speakers: np.ndarray  # S_hat x T binary
    types: np.ndarray  # 3 x T binary, from the type-token-only pass
    posteriors: np.ndarray  # (S_hat+3) x T from the final pass
    windows: list = field(default_factory=list)
    stop_reason: str = ""
    hit_max_speakers: bool = False

    @property
    def n_speakers(self) -> int:
        return self.speakers.shape[0]

    @property
    def iterations(self) -> int:
        return len(self.windows)

    def report(self) -> dict:
        return {
            "n_speakers": self.n_speakers,
            "iterations": self.iterations,
            "enrollment_windows": [None if w is None else [int(i) for i in w] for w in self.windows],
            "stop_reason": self.stop_reason,
            "hit_max_speakers": self.hit_max_speakers,
        }


def _gt_windows(ref_labels: np.ndarray, L_enroll: int) -> list:
    """Deterministic windows: centred in each speaker's first longest
    single-speaker run, L_enroll frames or the whole run if shorter."""
    out = []
    for s in range(ref_labels.shape[0] - N_TYPES):
        C = contiguous_segments(np.flatnonzero(single_speaker_mask(ref_labels, s)))
        seg = longest_segment(C)
        if seg is None:
            out.append(None)
            continue
        L = min(len(seg), L_enroll)
        start = (len(seg) - L) // 2
        out.append(seg[start:start + L])
    return out


def iterative_decode(x, p: Parameters, cfg: DecodeConfig, ref_labels=None) -> DecodeResult:
    cfg.validate()
    if cfg.strategy == "gt" and ref_labels is None:
        raise InputError("strategy 'gt' needs reference labels")
    rng = np.random.default_rng(cfg.seed)
    I_non, I_sgl, I_ovl, E = predict_speech_types(x, p, cfg)
    T = E.shape[0]
    types = np.zeros((N_TYPES, T), dtype=np.uint8)
    for row, idx in enumerate((I_non, I_sgl, I_ovl)):
        types[row, idx] = 1

    vectors: list = []
    windows: list = []
    reason = ""
    hit_max = False
    if cfg.strategy == "gt":
        ref = np.asarray(ref_labels)
        if ref.shape[1] != T:
            raise InputError(f"reference labels cover {ref.shape[1]} frames, features {T}")
        for win in _gt_windows(ref, cfg.L_enroll):
            windows.append(win)
            vectors.append(None if win is None else extract_enrollment(E, win))
        reason = "reference_speakers"
    else:
        sgl = np.zeros(T, dtype=bool)
        sgl[I_sgl] = True
        claimed = np.zeros(T, dtype=bool)
        oracle = cfg.oracle_num_speakers
        while True:
            if oracle is not None and len(vectors) >= oracle:
                reason = "oracle_count"
                break
            if len(vectors) >= cfg.max_speakers:
                reason, hit_max = "max_speakers", True
                break
            I = np.flatnonzero(sgl & ~claimed)
            C = contiguous_segments(I)
            C_prime = filter_segs(C, cfg.L_enroll)
            longest = longest_segment(C)
            longest_len = 0 if longest is None else len(longest)
            if longest is not None and not any(seg is longest for seg in C_prime):
                C_prime.append(longest)
            L_tmp = enrollment_length(longest_len, cfg.L_enroll)
            if oracle is not None:
                if longest_len == 0:
                    while len(vectors) < oracle:
                        vectors.append(None)
                        windows.append(None)
                    reason = "oracle_zero_fill"
                    break
            elif should_stop(longest_len, cfg.L_stop):
                reason = "l_stop"
                break
            idx = select_enrollment(cfg.strategy, C_prime, I, E, L_tmp, rng, cfg.k_max)
            windows.append(idx)
            vectors.append(extract_enrollment(E, idx))
            _, binary = forward_diarize(None, build_enrollment(p, vectors), p, cfg.threshold, E=E)
            claimed = binary[N_TYPES:].any(axis=0)

    if vectors:
        post, binary = forward_diarize(None, build_enrollment(p, vectors), p, cfg.threshold, E=E)
        speakers = binary[N_TYPES:]
    else:
        post = np.zeros((N_TYPES, T))
        speakers = np.zeros((0, T), dtype=np.uint8)
    if cfg.median_width > 1 and speakers.size:
        speakers = median_filter_rows(speakers, cfg.median_width)
    return DecodeResult(speakers, types, post, windows, reason, hit_max)
