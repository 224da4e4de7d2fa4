"""Feature-space simulation of labelled multi-speaker conversations.

Each speaker alternates between talking and silence with geometric
durations. A frame's feature vector is the sum of the active speakers'
centroids, each perturbed by within-speaker noise, plus background noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, InputError
from .features import FeatureSequence
from .segments import mask_runs

MAX_RETRIES = 20


@dataclass
class SpeakerProfile:
    centroid: np.ndarray
    within_spread: float
    id: int


@dataclass
class MixtureSpec:
    n_speakers: int = 2
    duration_frames: int = 500
    mean_utt_frames: float = 30.0
    mean_gap_frames: float | None = None  # None: 30 * max(1, S - 1)
    overlap_bias: float = 0.0
    noise_spread: float = 0.5
    seed: int = 0
    feature_dim: int = 345
    within_spread: float = 1.0
    centroid_spread: float = 1.0
    min_single_run: int = 30

    @property
    def gap_frames(self) -> float:
        if self.mean_gap_frames is not None:
            return float(self.mean_gap_frames)
        return 30.0 * max(1, self.n_speakers - 1)

    def validate(self) -> None:
        if not 1 <= self.n_speakers:
            raise InputError(f"n_speakers must be >= 1, got {self.n_speakers}")
        if self.duration_frames < 10 * self.n_speakers:
            raise InputError("duration_frames must be at least 10 per speaker")
        if self.mean_utt_frames <= 0 or self.gap_frames <= 0:
            raise InputError("mean utterance and gap lengths must be positive")
        if self.overlap_bias < 0:
            raise InputError("overlap_bias must be non-negative")
        if self.within_spread <= 0 or self.noise_spread < 0 or self.centroid_spread <= 0:
            raise InputError("spreads must be positive")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be positive")


@dataclass
class LabeledMixture:
    features: FeatureSequence
    speaker_activity: np.ndarray  # S x T, uint8
    type_labels: np.ndarray  # 3 x T, uint8, rows [non, sgl, ovl]
    seed: int = 0
    speakers: list = field(default_factory=list)

    @property
    def n_speakers(self) -> int:
        return self.speaker_activity.shape[0]

    @property
    def T(self) -> int:
        return self.speaker_activity.shape[1]

    def label_matrix(self) -> np.ndarray:
        """(S+3) x T labels in row order [non, sgl, ovl, spk_1..spk_S]."""
        return np.concatenate([self.type_labels, self.speaker_activity]).astype(np.uint8)


def derive_type_labels(speaker_activity) -> np.ndarray:
    act = np.asarray(speaker_activity)
    if act.ndim != 2:
        raise ContractError(f"speaker activity must be S x T, got shape {act.shape}")
    if not np.all((act == 0) | (act == 1)):
        raise ContractError("speaker activity must be binary")
    count = act.sum(axis=0)
    return np.stack([count == 0, count == 1, count >= 2]).astype(np.uint8)


def _draw_centroids(spec: MixtureSpec, rng) -> list[SpeakerProfile]:
    min_dist = 6.0 * spec.within_spread
    out = []
    tries = 0
    while len(out) < spec.n_speakers:
        c = rng.normal(0.0, spec.centroid_spread, spec.feature_dim)
        if all(np.linalg.norm(c - p.centroid) >= min_dist for p in out):
            out.append(SpeakerProfile(c, spec.within_spread, len(out)))
            continue
        tries += 1
        if tries > 1000:
            raise InputError("cannot place centroids 6 sigma_w apart; increase centroid_spread")
    return out


def _draw_activity(spec: MixtureSpec, rng) -> np.ndarray:
    S, T = spec.n_speakers, spec.duration_frames
    p_stop = 1.0 / spec.mean_utt_frames
    p_start = min(1.0, 1.0 / spec.gap_frames)
    p_on0 = spec.mean_utt_frames / (spec.mean_utt_frames + spec.gap_frames)
    act = np.zeros((S, T), dtype=np.uint8)
    for s in range(S):
        u = rng.random(T)
        on = u[0] < p_on0
        for t in range(T):
            if t > 0:
                if on:
                    on = u[t] >= p_stop
                else:
                    # speakers later in order are pulled towards talking over earlier ones
                    busy = s > 0 and act[:s, t].any()
                    boost = 1.0 + spec.overlap_bias if busy else 1.0
                    on = u[t] < min(1.0, p_start * boost)
            act[s, t] = on
    return act


def _has_enrollable_runs(act: np.ndarray, min_len: int) -> bool:
    single = act.sum(axis=0) == 1
    for s in range(act.shape[0]):
        runs = mask_runs((act[s] == 1) & single)
        if not any(b - a >= min_len for a, b in runs):
            return False
    return True


def _sample_once(spec: MixtureSpec, rng) -> LabeledMixture:
    speakers = _draw_centroids(spec, rng)
    act = _draw_activity(spec, rng)
    T, F = spec.duration_frames, spec.feature_dim
    feats = rng.normal(0.0, spec.noise_spread, (T, F))
    for spk in speakers:
        jitter = rng.normal(0.0, spk.within_spread, (T, F))
        on = act[spk.id] == 1
        feats[on] += spk.centroid + jitter[on]
    return LabeledMixture(
        features=FeatureSequence(feats, frame_shift_s=0.1),
        speaker_activity=act,
        type_labels=derive_type_labels(act),
        seed=spec.seed,
        speakers=speakers,
    )


def sample_mixture(spec: MixtureSpec) -> LabeledMixture:
    """Draw one mixture, fully determined by ``spec.seed``.

    When ``T >= 100 * S`` every speaker is guaranteed a single-speaker run of
    at least ``min_single_run`` frames; up to 20 derived seeds are tried.
    """
    spec.validate()
    need_runs = spec.duration_frames >= 100 * spec.n_speakers
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([spec.seed, attempt])
        mix = _sample_once(spec, rng)
        if not need_runs or _has_enrollable_runs(mix.speaker_activity, spec.min_single_run):
            return mix
    raise InputError(
        f"seed {spec.seed}: no mixture with a {spec.min_single_run}-frame single-speaker "
        f"run per speaker after {MAX_RETRIES} attempts; lengthen the mixture or the gaps"
    )


def overlap_ratio(speaker_activity) -> float:
    act = np.asarray(speaker_activity)
    return float(np.mean(act.sum(axis=0) >= 2))


def spec_to_dict(spec: MixtureSpec) -> dict:
    return asdict(spec)
