"""Attention encoder-decoder diarization network.

The encoder maps a T x F feature sequence to T x D frame embeddings with
self-attention blocks. The attractor decoder turns an enrollment sequence
(three learned speech-type tokens followed by one vector per speaker) into
attractors by self-attention over the tokens and cross-attention onto the
frame embeddings. Posteriors are ``sigmoid(A @ E.T)``.

Neither sequence carries positional information, so the encoder is
equivariant to frame permutations and the decoder to token permutations.
All blocks are post-norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ContractError, InputError, ShapeError
from .features import FeatureSequence
from .numerics import Tensor

TYPE_ROWS = ("non", "sgl", "ovl")
N_TYPES = 3
BCE_EPS = 1e-7


@dataclass
class ModelConfig:
    D: int = 256
    n_heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    ffn_dim: int = 1024
    F_in: int = 345
    dropout: float = 0.1
    ln_eps: float = 1e-5
    # initial gain of the decoder's final norm; small so that initial logits are near 0
    out_gain_init: float = 0.05

    def validate(self) -> None:
        for name in ("D", "n_heads", "enc_layers", "dec_layers", "ffn_dim", "F_in"):
            if getattr(self, name) < 1:
                raise InputError(f"ModelConfig.{name} must be >= 1")
        if self.D % self.n_heads:
            raise InputError(f"D={self.D} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Parameters:
    cfg: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def to_arrays(self) -> dict:
        return {name: t.data for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: dict) -> "Parameters":
        ref = init_parameters(cfg, seed=0)
        tensors = {}
        for name, t in ref.tensors.items():
            if name not in arrays:
                raise InputError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: expected {t.shape}, got {arr.shape}")
            tensors[name] = Tensor(arr, requires_grad=True)
        return cls(cfg, tensors)


def _xavier(rng, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, (fan_in, fan_out))


def init_parameters(cfg: ModelConfig, seed: int = 0) -> Parameters:
    cfg.validate()
    rng = np.random.default_rng(seed)
    D, H = cfg.D, cfg.ffn_dim
    p = {}

    def linear(name, fan_in, fan_out):
        p[f"{name}.w"] = _xavier(rng, fan_in, fan_out)
        p[f"{name}.b"] = np.zeros(fan_out)

    def norm(name, gain=1.0):
        p[f"{name}.g"] = np.full(D, gain)
        p[f"{name}.b"] = np.zeros(D)

    def attention(name):
        for proj in ("q", "k", "v", "o"):
            linear(f"{name}.{proj}", D, D)

    linear("in_proj", cfg.F_in, D)
    for i in range(cfg.enc_layers):
        attention(f"enc{i}.sa")
        norm(f"enc{i}.ln1")
        linear(f"enc{i}.ff1", D, H)
        linear(f"enc{i}.ff2", H, D)
        norm(f"enc{i}.ln2")
    for i in range(cfg.dec_layers):
        last = i == cfg.dec_layers - 1
        attention(f"dec{i}.sa")
        norm(f"dec{i}.ln1")
        attention(f"dec{i}.ca")
        norm(f"dec{i}.ln2")
        linear(f"dec{i}.ff1", D, H)
        linear(f"dec{i}.ff2", H, D)
        norm(f"dec{i}.ln3", gain=cfg.out_gain_init if last else 1.0)
    p["type_embed"] = rng.normal(0.0, 1.0, (N_TYPES, D))
    return Parameters(cfg, {k: Tensor(v, requires_grad=True) for k, v in p.items()})


# --------------------------------------------------------------------------
# building blocks


class _Ctx:
    """Dropout state for one forward pass; inert when ``rng`` is None."""

    __slots__ = ("p", "rng")

    def __init__(self, p: float, rng):
        self.p = p if rng is not None else 0.0
        self.rng = rng

    def drop(self, x: Tensor) -> Tensor:
        return nx.dropout(x, self.p, self.rng) if self.p > 0 else x


def _linear(x, p, name):
    return nx.add_row(nx.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def _norm(x, p, name):
    return nx.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], p.cfg.ln_eps)


def _attention(q_in, kv_in, p, name):
    n_heads = p.cfg.n_heads
    dk = p.cfg.D // n_heads
    q = _linear(q_in, p, f"{name}.q")
    k = _linear(kv_in, p, f"{name}.k")
    v = _linear(kv_in, p, f"{name}.v")
    heads = []
    for h in range(n_heads):
        lo, hi = h * dk, (h + 1) * dk
        qh, kh, vh = nx.slice_cols(q, lo, hi), nx.slice_cols(k, lo, hi), nx.slice_cols(v, lo, hi)
        scores = nx.scale(nx.matmul(qh, nx.transpose(kh)), 1.0 / math.sqrt(dk))
        heads.append(nx.matmul(nx.softmax_rows(scores), vh))
    merged = heads[0] if n_heads == 1 else nx.concat_cols(heads)
    return _linear(merged, p, f"{name}.o")


def _ffn(x, p, name):
    return _linear(nx.relu(_linear(x, p, f"{name}.ff1")), p, f"{name}.ff2")


def _as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, FeatureSequence):
        return Tensor(x.frames)
    return Tensor(np.asarray(x))


# --------------------------------------------------------------------------
# public operations


def encode(x, p: Parameters, rng=None) -> Tensor:
    """Frame embeddings E (T x D). ``rng`` enables dropout (training only)."""
    x = _as_input(x)
    if x.data.ndim != 2 or x.shape[1] != p.cfg.F_in:
        raise ShapeError(f"encode: expected T x {p.cfg.F_in} features, got {x.shape}")
    ctx = _Ctx(p.cfg.dropout, rng)
    h = _linear(x, p, "in_proj")
    for i in range(p.cfg.enc_layers):
        h = _norm(nx.add(h, ctx.drop(_attention(h, h, p, f"enc{i}.sa"))), p, f"enc{i}.ln1")
        h = _norm(nx.add(h, ctx.drop(_ffn(h, p, f"enc{i}"))), p, f"enc{i}.ln2")
    return h


@dataclass
class EnrollmentSequence:
    """Decoder input rows [e_non, e_sgl, e_ovl, e_spk1..e_spkS].

    ``valid[i]`` is False for speaker slots filled with a zero vector.
    ``windows`` records the frame indexes each speaker vector was averaged
    over (None for zero slots); it is informational only.
    """

    rows: Tensor
    valid: np.ndarray
    windows: list = field(default_factory=list)

    @property
    def n_speakers(self) -> int:
        return self.rows.shape[0] - N_TYPES


def build_enrollment(p: Parameters, speaker_vectors, windows=None) -> EnrollmentSequence:
    """Prepend the learned type tokens to per-speaker vectors.

    Each entry of ``speaker_vectors`` is a 1 x D tensor, a length-D array, or
    None for a zero slot.
    """
    D = p.cfg.D
    rows = [p["type_embed"]]
    valid = [True] * N_TYPES
    for vec in speaker_vectors:
        if vec is None:
            rows.append(nx.zeros((1, D)))
            valid.append(False)
        else:
            t = vec if isinstance(vec, Tensor) else Tensor(np.asarray(vec).reshape(1, D))
            if t.shape != (1, D):
                raise ShapeError(f"speaker enrollment must be 1 x {D}, got {t.shape}")
            rows.append(t)
            valid.append(True)
    seq = rows[0] if len(rows) == 1 else nx.concat_rows(rows)
    wins = list(windows) if windows is not None else [None] * len(speaker_vectors)
    return EnrollmentSequence(seq, np.array(valid), wins)


def decode_attractors(enroll, E: Tensor, p: Parameters, rng=None) -> Tensor:
    """Attractors A ((S+3) x D), row-aligned with the enrollment sequence."""
    z = enroll.rows if isinstance(enroll, EnrollmentSequence) else _as_input(enroll)
    if z.data.ndim != 2 or z.shape[1] != p.cfg.D:
        raise ShapeError(f"enrollment rows must be n x {p.cfg.D}, got {z.shape}")
    if E.shape[0] == 0:
        raise InputError("cannot decode attractors against an empty embedding sequence")
    ctx = _Ctx(p.cfg.dropout, rng)
    for i in range(p.cfg.dec_layers):
        z = _norm(nx.add(z, ctx.drop(_attention(z, z, p, f"dec{i}.sa"))), p, f"dec{i}.ln1")
        z = _norm(nx.add(z, ctx.drop(_attention(z, E, p, f"dec{i}.ca"))), p, f"dec{i}.ln2")
        z = _norm(nx.add(z, ctx.drop(_ffn(z, p, f"dec{i}"))), p, f"dec{i}.ln3")
    return z


def posteriors(A: Tensor, E: Tensor) -> Tensor:
    """sigmoid(A @ E.T): (S+3) x T activity posteriors."""
    if A.shape[1] != E.shape[1]:
        raise ShapeError(f"posteriors: attractor width {A.shape[1]} != embedding width {E.shape[1]}")
    return nx.sigmoid(nx.matmul(A, nx.transpose(E)))


def bce_loss(yhat: Tensor, y) -> Tensor:
    """Mean binary cross-entropy over all (row, frame) cells, posteriors
    clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=yhat.data.dtype)
    if y.shape != yhat.shape:
        raise ContractError(f"bce_loss: posterior shape {yhat.shape} != label shape {y.shape}")
    p = nx.clamp(yhat, BCE_EPS, 1.0 - BCE_EPS)
    pos = nx.mul(Tensor(y), nx.log(p))
    neg = nx.mul(Tensor(1.0 - y), nx.log(nx.add_scalar(nx.scale(p, -1.0), 1.0)))
    return nx.scale(nx.sum_all(nx.add(pos, neg)), -1.0 / y.size)


def extract_enrollment(E: Tensor, frame_idx) -> Tensor:
    """Mean of the selected rows of E, as a 1 x D tensor."""
    idx = np.asarray(frame_idx, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ContractError("extract_enrollment needs at least one frame index")
    T = E.shape[0]
    if idx.min() < 0 or idx.max() >= T:
        raise ContractError(f"enrollment index out of range [0, {T})")
    return nx.mean_rows(nx.take_rows(E, idx))


def forward_diarize(x, enroll: EnrollmentSequence, p: Parameters, threshold: float = 0.5,
                    E: Tensor | None = None):
    """Posteriors and binary activity (posterior >= threshold), both (S+3) x T.

    Pass a precomputed ``E`` to skip the encoder.
    """
    if E is None:
        E = encode(x, p)
    A = decode_attractors(enroll, E, p)
    post = posteriors(A, E).data
    return post, (post >= threshold).astype(np.uint8)


def median_filter_rows(binary: np.ndarray, width: int = 11) -> np.ndarray:
    """Odd-width median filter along time, per row; edges replicated."""
    if width <= 1:
        return binary
    half = width // 2
    padded = np.pad(binary, ((0, 0), (half, half)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    return (np.median(windows, axis=2) >= 0.5).astype(binary.dtype)
