"""Diarization scoring: DER with a no-score collar, per speech-type FA/MISS,
and RTTM reading/writing.

DER is computed on a 10 ms grid. Around every reference segment boundary
a zone of +-collar seconds is excluded from scoring (md-eval convention).
Hypothesis speakers are mapped one-to-one onto reference speakers so as to
maximise matched speaker time; overlapped speech is scored with
multiplicity unless ``score_overlap`` is False.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError, InputError
from .segments import mask_runs

RESOLUTION = 0.01
TYPE_NAMES = ("non", "sgl", "ovl")


@dataclass
class Annotation:
    recording: str
    segments: list = field(default_factory=list)  # (speaker, start_s, end_s)
    duration: float = 0.0

    def __post_init__(self):
        segs = []
        for spk, start, end in self.segments:
            start, end = float(start), float(end)
            if start < 0 or end <= start:
                raise InputError(f"{self.recording}: bad segment {spk} [{start}, {end})")
            segs.append((str(spk), start, end))
        self.segments = _merge(segs)
        if self.segments:
            self.duration = max(self.duration, max(e for _, _, e in self.segments))

    @property
    def speakers(self) -> list[str]:
        return sorted({s for s, _, _ in self.segments})


def _merge(segs):
    """Merge touching or overlapping segments of the same speaker."""
    out = []
    by_spk = {}
    for spk, s, e in sorted(segs, key=lambda x: (x[0], x[1], x[2])):
        by_spk.setdefault(spk, []).append([s, e])
    for spk, items in by_spk.items():
        cur = items[0]
        for s, e in items[1:]:
            if s <= cur[1]:
                cur[1] = max(cur[1], e)
            else:
                out.append((spk, cur[0], cur[1]))
                cur = [s, e]
        out.append((spk, cur[0], cur[1]))
    return sorted(out, key=lambda x: (x[1], x[0], x[2]))


def _tick(t: float) -> int:
    return int(round(t / RESOLUTION))


def annotation_to_grid(ann: Annotation, n: int, speakers=None) -> tuple[np.ndarray, list[str]]:
    speakers = list(ann.speakers if speakers is None else speakers)
    pos = {s: i for i, s in enumerate(speakers)}
    grid = np.zeros((len(speakers), n), dtype=bool)
    for spk, s, e in ann.segments:
        grid[pos[spk], _tick(s):_tick(e)] = True
    return grid, speakers


def collar_mask(ref: Annotation, n: int, collar_s: float) -> np.ndarray:
    """True where frames are scored."""
    keep = np.ones(n, dtype=bool)
    if collar_s <= 0:
        return keep
    for _, s, e in ref.segments:
        for b in (s, e):
            keep[max(0, _tick(b - collar_s)):max(0, _tick(b + collar_s))] = False
    return keep


@dataclass
class DerReport:
    miss_s: float
    fa_s: float
    confusion_s: float
    scored_speech_s: float
    der: float
    mapping: dict = field(default_factory=dict)  # hyp speaker -> ref speaker
    # integer 10 ms tick counts behind the seconds above
    miss: int = 0
    fa: int = 0
    confusion: int = 0
    scored: int = 0

    def to_dict(self) -> dict:
        return {
            "der": self.der, "miss_s": self.miss_s, "fa_s": self.fa_s,
            "confusion_s": self.confusion_s, "scored_speech_s": self.scored_speech_s,
            "mapping": self.mapping,
        }


def frame_error_counts(R: np.ndarray, H: np.ndarray, mapping) -> tuple[int, int, int, int]:
    """(miss, fa, confusion, scored) tick counts on already-masked grids.

    ``mapping`` is a list of (ref_row, hyp_row) pairs.
    """
    n_ref = R.sum(axis=0)
    n_hyp = H.sum(axis=0)
    correct = np.zeros(R.shape[1], dtype=np.int64)
    for i, j in mapping:
        correct += R[i] & H[j]
    miss = int(np.maximum(n_ref - n_hyp, 0).sum())
    fa = int(np.maximum(n_hyp - n_ref, 0).sum())
    conf = int((np.minimum(n_ref, n_hyp) - correct).sum())
    return miss, fa, conf, int(n_ref.sum())


def _ratio(err: int, scored: int) -> float:
    if scored == 0:
        return 0.0 if err == 0 else math.inf
    return err / scored


def scoring_grids(ref: Annotation, hyp: Annotation, collar_s: float = 0.25,
                  score_overlap: bool = True):
    """Masked reference/hypothesis grids and speaker names, for reuse by oracles."""
    if collar_s < 0:
        raise InputError("collar must be non-negative")
    end = max(ref.duration, hyp.duration)
    n = _tick(end) + 1
    R, ref_spk = annotation_to_grid(ref, n)
    H, hyp_spk = annotation_to_grid(hyp, n)
    keep = collar_mask(ref, n, collar_s)
    if not score_overlap:
        keep &= R.sum(axis=0) < 2
    return R[:, keep], H[:, keep], ref_spk, hyp_spk


def der(ref: Annotation, hyp: Annotation, collar_s: float = 0.25,
        score_overlap: bool = True) -> DerReport:
    R, H, ref_spk, hyp_spk = scoring_grids(ref, hyp, collar_s, score_overlap)
    pairs = []
    if R.shape[0] and H.shape[0]:
        overlap = R.astype(np.int64) @ H.T.astype(np.int64)
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    miss, fa, conf, scored = frame_error_counts(R, H, pairs)
    return DerReport(
        miss_s=miss * RESOLUTION, fa_s=fa * RESOLUTION, confusion_s=conf * RESOLUTION,
        scored_speech_s=scored * RESOLUTION, der=_ratio(miss + fa + conf, scored),
        mapping={hyp_spk[j]: ref_spk[i] for i, j in pairs},
        miss=miss, fa=fa, confusion=conf, scored=scored,
    )


def aggregate(reports) -> DerReport:
    """Pool error and scored time over recordings (time-weighted DER)."""
    reports = list(reports)
    miss = sum(r.miss for r in reports)
    fa = sum(r.fa for r in reports)
    conf = sum(r.confusion for r in reports)
    scored = sum(r.scored for r in reports)
    return DerReport(miss * RESOLUTION, fa * RESOLUTION, conf * RESOLUTION, scored * RESOLUTION,
                     _ratio(miss + fa + conf, scored), {}, miss, fa, conf, scored)


# --------------------------------------------------------------------------
# speech-type analysis


@dataclass
class TypeErrorReport:
    """Per-class false alarm / miss counts over T frames.

    Unstarred rates divide by the reference class duration (or, with
    ``fa_denominator="complement"``, FA divides by the non-class duration);
    starred rates divide by the total duration. Rates are percentages;
    unstarred rates are None when the reference class is empty.
    """

    T: int
    frame_shift_s: float
    ref_count: dict
    fa_count: dict
    miss_count: dict
    fa_denominator: str = "ref"

    def fa(self, c: str):
        denom = self.ref_count[c] if self.fa_denominator == "ref" else self.T - self.ref_count[c]
        return None if denom == 0 else 100.0 * self.fa_count[c] / denom

    def miss(self, c: str):
        r = self.ref_count[c]
        return None if r == 0 else 100.0 * self.miss_count[c] / r

    def fa_star(self, c: str) -> float:
        return 100.0 * self.fa_count[c] / self.T if self.T else 0.0

    def miss_star(self, c: str) -> float:
        return 100.0 * self.miss_count[c] / self.T if self.T else 0.0

    def to_dict(self) -> dict:
        return {c: {"FA": self.fa(c), "MISS": self.miss(c), "FA*": self.fa_star(c),
                    "MISS*": self.miss_star(c), "ref_frames": self.ref_count[c]}
                for c in TYPE_NAMES}


def type_fa_miss(ref_types, hyp_types, frame_shift_s: float = 0.1,
                 fa_denominator: str = "ref") -> TypeErrorReport:
    ref = np.asarray(ref_types).astype(bool)
    hyp = np.asarray(hyp_types).astype(bool)
    if ref.shape != hyp.shape or ref.shape[0] != 3:
        raise ContractError(f"type rows must both be 3 x T, got {ref.shape} and {hyp.shape}")
    if fa_denominator not in ("ref", "complement"):
        raise InputError("fa_denominator must be 'ref' or 'complement'")
    rc, fc, mc = {}, {}, {}
    for i, c in enumerate(TYPE_NAMES):
        rc[c] = int(ref[i].sum())
        fc[c] = int((hyp[i] & ~ref[i]).sum())
        mc[c] = int((ref[i] & ~hyp[i]).sum())
    return TypeErrorReport(ref.shape[1], frame_shift_s, rc, fc, mc, fa_denominator)


def aggregate_types(reports) -> TypeErrorReport:
    reports = list(reports)
    T = sum(r.T for r in reports)
    total = {name: {c: sum(getattr(r, name)[c] for r in reports) for c in TYPE_NAMES}
             for name in ("ref_count", "fa_count", "miss_count")}
    shift = reports[0].frame_shift_s if reports else 0.1
    denom = reports[0].fa_denominator if reports else "ref"
    return TypeErrorReport(T, shift, total["ref_count"], total["fa_count"], total["miss_count"], denom)


# --------------------------------------------------------------------------
# conversions and RTTM


def frames_to_annotation(activity, frame_shift_s: float, speakers=None,
                         recording: str = "rec") -> Annotation:
    act = np.asarray(activity)
    if act.ndim != 2:
        raise ContractError("activity must be S x T")
    names = list(speakers) if speakers is not None else [f"spk{i}" for i in range(act.shape[0])]
    segs = []
    for name, row in zip(names, act):
        for a, b in mask_runs(row):
            segs.append((name, round(a * frame_shift_s, 6), round(b * frame_shift_s, 6)))
    return Annotation(recording, segs, duration=round(act.shape[1] * frame_shift_s, 6))


def annotation_to_frames(ann: Annotation, frame_shift_s: float, n_frames: int, speakers=None):
    names = list(ann.speakers if speakers is None else speakers)
    pos = {s: i for i, s in enumerate(names)}
    out = np.zeros((len(names), n_frames), dtype=np.uint8)
    for spk, s, e in ann.segments:
        out[pos[spk], int(round(s / frame_shift_s)):int(round(e / frame_shift_s))] = 1
    return out, names


def format_rttm(ann: Annotation) -> str:
    lines = []
    for spk, s, e in ann.segments:
        lines.append(f"SPEAKER {ann.recording} 1 {s:.3f} {e - s:.3f} <NA> <NA> {spk} <NA> <NA>")
    return "\n".join(lines) + ("\n" if lines else "")


def write_rttm(path, annotations) -> None:
    with open(path, "w") as f:
        for ann in annotations:
            f.write(format_rttm(ann))


def read_rttm(path) -> dict:
    """Recording id -> Annotation. Non-SPEAKER records are skipped."""
    segs: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        fields = line.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise InputError(f"{path}:{lineno}: malformed SPEAKER line")
        rec, start, dur, spk = fields[1], float(fields[3]), float(fields[4]), fields[7]
        segs.setdefault(rec, []).append((spk, start, start + dur))
    return {rec: Annotation(rec, items) for rec, items in segs.items()}
