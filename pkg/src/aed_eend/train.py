"""Teacher-forced training.

For every speaker an enrollment window is cut from its ground-truth
single-speaker frames, averaged over the frame embeddings, and fed to the
decoder alongside the three learned type tokens. Some speaker slots are
zeroed at random so the model copes with missing enrollments.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .container import read_container, write_container
from .errors import ContainerError, InputError, NumericError
from .model import (
    N_TYPES,
    EnrollmentSequence,
    ModelConfig,
    Parameters,
    bce_loss,
    build_enrollment,
    decode_attractors,
    encode,
    extract_enrollment,
    init_parameters,
    posteriors,
)
from .segments import mask_runs

CHECKPOINT_LAYOUT = 1


@dataclass
class TrainConfig:
    L_enroll_min: int = 10
    L_enroll_max: int = 30
    zero_drop_p: float = 0.1
    warmup_steps: int = 1000
    lr_scale: float = 0.3
    batch_size: int = 1
    epochs: int = 50
    grad_clip: float = 5.0
    seed: int = 0
    checkpoint_every: int = 0  # steps; 0 = end of every epoch only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    chunk_frames: int = 0  # 0 = whole mixtures
    sign_flip: bool = False  # random per-dimension feature signs each time a mixture is used

    def validate(self) -> None:
        if not 1 <= self.L_enroll_min <= self.L_enroll_max:
            raise InputError("need 1 <= L_enroll_min <= L_enroll_max")
        if not 0.0 <= self.zero_drop_p < 1.0:
            raise InputError("zero_drop_p must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_steps < 1:
            raise InputError("batch_size and warmup_steps must be >= 1, epochs >= 0")
        if self.grad_clip <= 0 or self.lr_scale <= 0:
            raise InputError("grad_clip and lr_scale must be positive")


def learning_rate(step: int, d_model: int, cfg: TrainConfig) -> float:
    """Inverse-square-root schedule with linear warmup (``step`` >= 1)."""
    step = max(step, 1)
    return cfg.lr_scale * d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


# --------------------------------------------------------------------------
# teacher forcing


def single_speaker_mask(labels: np.ndarray, s: int) -> np.ndarray:
    """Frames where speaker ``s`` talks alone, from an (S+3) x T label matrix."""
    return (labels[N_TYPES + s] == 1) & (labels[1] == 1)


def sample_window(mask: np.ndarray, length: int, rng) -> np.ndarray | None:
    """Uniform ``length``-frame window inside the true runs of ``mask``.

    Falls back to the (first) longest run when no run is long enough;
    returns None when the mask is empty.
    """
    runs = mask_runs(mask)
    if not runs:
        return None
    starts = []
    for a, b in runs:
        if b - a >= length:
            starts.append(np.arange(a, b - length + 1))
    if not starts:
        a, b = max(runs, key=lambda r: r[1] - r[0])
        return np.arange(a, b)
    starts = np.concatenate(starts)
    t0 = int(starts[rng.integers(starts.size)])
    return np.arange(t0, t0 + length)


def teacher_force_sample(labels, E, cfg: TrainConfig, rng, p: Parameters) -> EnrollmentSequence:
    labels = np.asarray(labels)
    S = labels.shape[0] - N_TYPES
    vectors, windows = [], []
    for s in range(S):
        L = int(rng.integers(cfg.L_enroll_min, cfg.L_enroll_max + 1))
        win = sample_window(single_speaker_mask(labels, s), L, rng)
        windows.append(win)
        vectors.append(None if win is None else extract_enrollment(E, win))
    # slot dropping is drawn after all windows so its randomness is independent of S
    drop = rng.random(S) < cfg.zero_drop_p
    for s in range(S):
        if drop[s]:
            vectors[s] = None
    return build_enrollment(p, vectors, windows)


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, p: Parameters) -> "AdamState":
        return cls(0, {k: np.zeros_like(t.data) for k, t in p},
                   {k: np.zeros_like(t.data) for k, t in p})


def adam_update(p: Parameters, grads: dict, opt: AdamState, lr: float, cfg: TrainConfig) -> None:
    opt.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for name, t in p:
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def _chunk(mix_labels, feats, cfg: TrainConfig, rng):
    if cfg.chunk_frames <= 0 or feats.shape[0] <= cfg.chunk_frames:
        return feats, mix_labels
    t0 = int(rng.integers(0, feats.shape[0] - cfg.chunk_frames + 1))
    sl = slice(t0, t0 + cfg.chunk_frames)
    return feats[sl], mix_labels[:, sl]


def mixture_loss(mix, p: Parameters, cfg: TrainConfig, rng):
    """Forward one mixture under teacher forcing; returns (loss tensor, tape)."""
    feats, labels = _chunk(mix.label_matrix(), mix.features.frames, cfg, rng)
    if cfg.sign_flip:
        feats = feats * rng.choice(np.array([-1.0, 1.0]), feats.shape[1])
    tape = nx.Tape()
    with tape:
        E = encode(feats, p, rng=rng)
        enroll = teacher_force_sample(labels, E, cfg, rng, p)
        A = decode_attractors(enroll, E, p, rng=rng)
        loss = bce_loss(posteriors(A, E), labels)
    return loss, tape


def train_step(batch, p: Parameters, opt: AdamState, cfg: TrainConfig, rng) -> float:
    """One optimiser update over ``batch``; returns the mean batch loss."""
    if not batch:
        raise InputError("empty batch")
    grads = {name: np.zeros_like(t.data) for name, t in p}
    total = 0.0
    for mix in batch:
        p.zero_grad()
        loss, tape = mixture_loss(mix, p, cfg, rng)
        nx.backward(loss, tape)
        total += loss.item()
        for name, t in p:
            if t.grad is not None:
                grads[name] += t.grad
    n = len(batch)
    mean_loss = total / n
    norms = {name: float(np.linalg.norm(g)) / n for name, g in grads.items()}
    gnorm = math.sqrt(sum(x * x for x in norms.values()))
    lr = learning_rate(opt.step + 1, p.cfg.D, cfg)
    if not (math.isfinite(mean_loss) and math.isfinite(gnorm)):
        raise NumericError(
            f"non-finite loss at step {opt.step + 1}",
            {"step": opt.step + 1, "lr": lr, "loss": repr(mean_loss),
             "grad_norm": repr(gnorm), "grad_norms": {k: repr(v) for k, v in norms.items()}},
        )
    clip = min(1.0, cfg.grad_clip / (gnorm + 1e-12))
    for name in grads:
        grads[name] *= clip / n
    adam_update(p, grads, opt, lr, cfg)
    p.zero_grad()
    train_step.last_grad_norm = gnorm
    train_step.last_lr = lr
    return mean_loss


train_step.last_grad_norm = 0.0
train_step.last_lr = 0.0


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: Parameters
    opt: AdamState
    train_cfg: TrainConfig
    model_cfg: ModelConfig
    epoch: int = 0
    batch_index: int = 0
    running_loss: float = 0.0
    rng_state: dict | None = None
    order: np.ndarray | None = None


def save_checkpoint(path, ck: Checkpoint) -> None:
    meta = {
        "kind": "checkpoint",
        "layout": CHECKPOINT_LAYOUT,
        "model_cfg": ck.model_cfg.to_dict(),
        "train_cfg": asdict(ck.train_cfg),
        "step": ck.opt.step,
        "epoch": ck.epoch,
        "batch_index": ck.batch_index,
        "running_loss": ck.running_loss,
        "rng_state": ck.rng_state,
    }
    arrays = {}
    for name, t in ck.params:
        arrays[f"param/{name}"] = t.data
        arrays[f"adam_m/{name}"] = ck.opt.m[name]
        arrays[f"adam_v/{name}"] = ck.opt.v[name]
    if ck.order is not None:
        arrays["order"] = np.asarray(ck.order, dtype="<i8")
    write_container(path, meta, arrays)


def save_model(path, p: Parameters) -> None:
    meta = {"kind": "model", "layout": CHECKPOINT_LAYOUT, "model_cfg": p.cfg.to_dict()}
    write_container(path, meta, {f"param/{k}": t.data for k, t in p})


def _model_cfg(meta) -> ModelConfig:
    known = ModelConfig.__dataclass_fields__
    return ModelConfig(**{k: v for k, v in meta["model_cfg"].items() if k in known})


def _params_from(meta, arrays) -> Parameters:
    cfg = _model_cfg(meta)
    plain = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    return Parameters.from_arrays(cfg, plain)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ContainerError(f"{path}: not a training checkpoint (kind={meta.get('kind')!r})")
    if meta.get("layout") != CHECKPOINT_LAYOUT:
        raise ContainerError(f"{path}: checkpoint layout {meta.get('layout')} != {CHECKPOINT_LAYOUT}")
    params = _params_from(meta, arrays)
    opt = AdamState(int(meta["step"]),
                    {k: arrays[f"adam_m/{k}"].copy() for k in params.names()},
                    {k: arrays[f"adam_v/{k}"].copy() for k in params.names()})
    known = TrainConfig.__dataclass_fields__
    tcfg = TrainConfig(**{k: v for k, v in meta["train_cfg"].items() if k in known})
    return Checkpoint(params, opt, tcfg, params.cfg, int(meta["epoch"]),
                      int(meta["batch_index"]), float(meta["running_loss"]),
                      meta.get("rng_state"), arrays.get("order"))


def load_model(path) -> Parameters:
    """Parameters from either a model file or a training checkpoint."""
    meta, arrays = read_container(path)
    if meta.get("kind") not in ("checkpoint", "model"):
        raise ContainerError(f"{path}: no model parameters (kind={meta.get('kind')!r})")
    return _params_from(meta, arrays)


# --------------------------------------------------------------------------
# loop


class Trainer:
    """Epoch loop with resumable state.

    All randomness (shuffling, dropout, enrollment sampling, slot dropping)
    comes from one generator whose state is checkpointed, so a resumed run
    continues exactly where the interrupted one stopped.
    """

    def __init__(self, mixtures, model_cfg: ModelConfig, cfg: TrainConfig,
                 params: Parameters | None = None, log=None):
        cfg.validate()
        self.mixtures = list(mixtures)
        if not self.mixtures:
            raise InputError("no training mixtures")
        self.cfg = cfg
        self.params = params or init_parameters(model_cfg, seed=cfg.seed)
        self.opt = AdamState.zeros_like(self.params)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.batch_index = 0
        self.order = None
        self.running_loss = 0.0
        self.log = log
        self.history: list[float] = []

    @classmethod
    def resume(cls, mixtures, ck: Checkpoint, log=None) -> "Trainer":
        tr = cls(mixtures, ck.model_cfg, ck.train_cfg, params=ck.params, log=log)
        tr.opt = ck.opt
        tr.epoch = ck.epoch
        tr.batch_index = ck.batch_index
        tr.running_loss = ck.running_loss
        tr.order = None if ck.order is None else np.asarray(ck.order, dtype=np.int64)
        if ck.rng_state is not None:
            tr.rng.bit_generator.state = ck.rng_state
        return tr

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.params, self.opt, self.cfg, self.params.cfg, self.epoch,
                          self.batch_index, self.running_loss,
                          self.rng.bit_generator.state, self.order)

    def _batches(self):
        B = self.cfg.batch_size
        return math.ceil(len(self.mixtures) / B)

    def step(self) -> float:
        """Run the next batch, advancing epoch bookkeeping."""
        if self.order is None or self.batch_index >= self._batches():
            self.order = self.rng.permutation(len(self.mixtures))
            self.batch_index = 0
        B = self.cfg.batch_size
        idx = self.order[self.batch_index * B:(self.batch_index + 1) * B]
        loss = train_step([self.mixtures[i] for i in idx], self.params, self.opt, self.cfg, self.rng)
        self.batch_index += 1
        self.running_loss += loss
        if self.log is not None:
            self.log.write(json.dumps({
                "step": self.opt.step, "epoch": self.epoch, "loss": loss,
                "lr": train_step.last_lr, "grad_norm": train_step.last_grad_norm,
            }) + "\n")
        if self.batch_index >= self._batches():
            self.history.append(self.running_loss / self._batches())
            self.running_loss = 0.0
            self.epoch += 1
        return loss

    def run(self, epochs: int | None = None, on_checkpoint=None) -> list[float]:
        """Train until ``epochs`` completed epochs; returns mean loss per epoch run."""
        target = self.cfg.epochs if epochs is None else epochs
        every = self.cfg.checkpoint_every
        while self.epoch < target:
            ep = self.epoch
            self.step()
            boundary = self.epoch != ep
            if on_checkpoint is not None and (boundary or (every and self.opt.step % every == 0)):
                on_checkpoint(self)
        return self.history
