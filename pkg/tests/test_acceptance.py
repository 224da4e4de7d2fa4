"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 7 trains a model from scratch and takes several minutes; criteria
8 and 9 reuse its decodes.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from aed_eend import numerics as nx
from aed_eend.cluster import spectral_cluster
from aed_eend.decode import (
    DecodeConfig,
    contiguous_segments,
    enrollment_length,
    filter_segs,
    iterative_decode,
    longest_segment,
    should_stop,
)
from aed_eend.model import (
    BCE_EPS,
    ModelConfig,
    bce_loss,
    build_enrollment,
    decode_attractors,
    encode,
    init_parameters,
    posteriors,
)
from aed_eend.score import Annotation, aggregate, der, frames_to_annotation, type_fa_miss
from aed_eend.simulate import MixtureSpec, sample_mixture
from aed_eend.train import TrainConfig, Trainer

from conftest import enrolled_loss
from test_cluster import bundles, same_partition
from test_decode import scan_runs
from test_model import jitter
from test_score import brute_force_der, random_annotation


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_integrity(capsys):
    t0 = time.perf_counter()
    cfg = ModelConfig(D=16, n_heads=2, enc_layers=2, dec_layers=2, ffn_dim=32, F_in=8, dropout=0.0)
    p = jitter(init_parameters(cfg, seed=0), 1)
    rng = np.random.default_rng(2)
    T, S = 12, 2
    x = rng.normal(size=(T, cfg.F_in))
    y = rng.integers(0, 2, (3 + S, T))
    wins = [[0, 1, 2], [6, 7, 8, 9]]

    tape = nx.Tape()
    with tape:
        loss = enrolled_loss(p, x, y, wins)
    nx.backward(loss, tape)

    h, worst, where, count = 1e-5, 0.0, None, 0
    for name in p.names():
        t = p[name]
        # decoder-side parameters leave the embeddings unchanged, so reuse them
        E = None if name.startswith(("in_proj", "enc")) else encode(x, p)
        for i in np.ndindex(t.shape):
            orig = t.data[i]
            t.data[i] = orig + h
            up = enrolled_loss(p, x, y, wins, E).item()
            t.data[i] = orig - h
            down = enrolled_loss(p, x, y, wins, E).item()
            t.data[i] = orig
            fd = (up - down) / (2 * h)
            g = t.grad[i]
            # floor sits far above the difference quotient's roundoff (~eps*|L|/h = 2e-11),
            # so structurally zero gradients such as attention key biases compare absolutely
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
            count += 1
            if rel > worst:
                worst, where = rel, (name, i)
    # a key bias shifts every score in a softmax row equally, so its gradient is exactly zero
    key_bias = max(float(np.max(np.abs(p[n].grad))) for n in p.names() if n.endswith(".k.b"))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and key_bias <= 1e-12 and elapsed < 60
    report(capsys, 1, ok, f"{count} entries, max rel err {worst:.2e} at {where}, "
                          f"max |key-bias grad| {key_bias:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_equivariance(capsys):
    t0 = time.perf_counter()
    worst_enc = worst_dec = 0.0
    for k in range(100):
        rng = np.random.default_rng(k)
        cfg = ModelConfig(D=16, n_heads=2, enc_layers=2, dec_layers=2, ffn_dim=32, F_in=8, dropout=0.0)
        p = jitter(init_parameters(cfg, seed=k), 1000 + k)
        T = int(rng.integers(2, 30))
        x = rng.normal(size=(T, 8))
        perm = rng.permutation(T)
        E = encode(x, p)
        worst_enc = max(worst_enc, np.max(np.abs(encode(x[perm], p).data - E.data[perm])))

        S = int(rng.integers(2, 6))
        spk = rng.normal(size=(S, 16))
        sp = rng.permutation(S)
        A = decode_attractors(build_enrollment(p, list(spk)), E, p).data
        Ap = decode_attractors(build_enrollment(p, list(spk[sp])), E, p).data
        worst_dec = max(worst_dec, np.max(np.abs(Ap[:3] - A[:3])), np.max(np.abs(Ap[3:] - A[3:][sp])))
    elapsed = time.perf_counter() - t0
    ok = worst_enc <= 1e-10 and worst_dec <= 1e-10 and elapsed < 30
    report(capsys, 2, ok, f"encoder {worst_enc:.1e}, decoder {worst_dec:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 3


def test_criterion_3_formula_oracles(capsys):
    rng = np.random.default_rng(3)
    worst_post = worst_loss = 0.0
    for _ in range(100):
        S, T, D = (int(v) for v in rng.integers(1, 9, 3))
        A, E = rng.normal(size=(S, D)), rng.normal(size=(T, D))
        got = posteriors(nx.Tensor(A), nx.Tensor(E)).data
        y = rng.integers(0, 2, (S, T))
        total = 0.0
        for s in range(S):
            for t in range(T):
                d = sum(A[s, k] * E[t, k] for k in range(D))
                q = 1 / (1 + math.exp(-d))
                worst_post = max(worst_post, abs(got[s, t] - q))
                q = min(max(q, BCE_EPS), 1 - BCE_EPS)
                total += -y[s, t] * math.log(q) - (1 - y[s, t]) * math.log(1 - q)
        loss = bce_loss(nx.Tensor(got), y).item()
        worst_loss = max(worst_loss, abs(loss - total / (S * T)))
    half = abs(bce_loss(nx.Tensor(np.full((4, 9), 0.5)), rng.integers(0, 2, (4, 9))).item() - math.log(2))
    ok = worst_post <= 1e-12 and worst_loss <= 1e-12 and half <= 1e-12
    report(capsys, 3, ok, f"posterior {worst_post:.1e}, loss {worst_loss:.1e}, |bce(0.5)-ln2| {half:.1e}")


# ---------------------------------------------------------------- 4


def test_criterion_4_algorithm_plumbing(capsys):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(1000):
        I = np.flatnonzero(rng.random(200) < rng.uniform(0.05, 0.95))
        runs = scan_runs(I.tolist())
        C = contiguous_segments(I)
        L = int(rng.integers(1, 12))
        best = max((len(r) for r in runs), default=0)
        longest = longest_segment(C)
        L_enroll, L_stop = int(rng.integers(1, 10)), int(rng.integers(1, 15))
        mismatches += [c.tolist() for c in C] != runs
        mismatches += [c.tolist() for c in filter_segs(C, L)] != [r for r in runs if len(r) >= L]
        mismatches += (0 if longest is None else len(longest)) != best
        mismatches += enrollment_length(best, L_enroll) != min(best, L_enroll)
        mismatches += should_stop(best, L_stop) != (best < L_stop)

    cfg = ModelConfig(D=16, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=32, F_in=32, dropout=0.0)
    p = init_parameters(cfg, seed=0)
    mix = sample_mixture(MixtureSpec(n_speakers=2, duration_frames=200, seed=4, feature_dim=32))
    deterministic = True
    for strategy in ("gt", "init"):
        outs = [iterative_decode(mix.features, p, DecodeConfig(strategy=strategy, seed=s, max_speakers=4),
                                 ref_labels=mix.label_matrix()) for s in (0, 1, 2)]
        for o in outs[1:]:
            deterministic &= np.array_equal(o.speakers, outs[0].speakers)
            deterministic &= [None if w is None else w.tolist() for w in o.windows] == \
                             [None if w is None else w.tolist() for w in outs[0].windows]
    ok = mismatches == 0 and deterministic
    report(capsys, 4, ok, f"{mismatches} oracle mismatches over 1000 sets, gt/init deterministic={deterministic}")


# ---------------------------------------------------------------- 5


def test_criterion_5_spectral_clustering(capsys):
    exact = hits = trials = 0
    for k in (2, 3, 4):
        for seed in range(100):
            rng = np.random.default_rng(50_000 + 1000 * k + seed)
            X, truth = bundles(k, 15, 16, 0.05, rng)
            labels, k_hat = spectral_cluster(X, return_k=True)
            exact += same_partition(labels, truth)
            hits += k_hat == k
            trials += 1
    ok = exact == trials and hits >= 0.95 * trials
    report(capsys, 5, ok, f"exact recovery {exact}/{trials}, eigengap k correct {hits}/{trials}")


# ---------------------------------------------------------------- 6


def test_criterion_6_der_scorer(capsys):
    rng = np.random.default_rng(6)
    brute_ok = self_zero = swap_ok = mono_ok = True
    for _ in range(20):
        ref = random_annotation(rng, int(rng.integers(1, 5)), 500, prefix="r")
        hyp = random_annotation(rng, int(rng.integers(1, 5)), 500, prefix="h")
        prev = None
        for collar in (0.0, 0.1, 0.25, 0.5):
            rep = der(ref, hyp, collar)
            brute_ok &= (rep.miss, rep.fa, rep.confusion, rep.scored) == brute_force_der(ref, hyp, collar)
            cur = (rep.miss, rep.fa, rep.confusion, rep.scored)
            if prev is not None:
                mono_ok &= all(c <= q for c, q in zip(cur, prev))
            prev = cur
        self_zero &= der(ref, ref).der == 0.0
        names = sorted(hyp.speakers)
        rename = dict(zip(names, reversed([f"z{i}" for i in range(len(names))])))
        swapped = Annotation(hyp.recording, [(rename[s], a, b) for s, a, b in hyp.segments], hyp.duration)
        a, b = der(ref, hyp), der(ref, swapped)
        swap_ok &= (a.miss, a.fa, a.confusion) == (b.miss, b.fa, b.confusion)
    ok = brute_ok and self_zero and swap_ok and mono_ok
    report(capsys, 6, ok, f"brute force {brute_ok}, DER(ref,ref)=0 {self_zero}, "
                          f"label swap {swap_ok}, collar monotone {mono_ok}")


# ---------------------------------------------------------------- 7, 8, 9

N_TRAIN, N_EVAL, T_MIX, EPOCHS = 80, 50, 500, 50


@pytest.fixture(scope="module")
def desk_run():
    """Train the desk-scale model once and decode the held-out set."""
    t0 = time.perf_counter()
    train = [sample_mixture(MixtureSpec(n_speakers=2, duration_frames=T_MIX, seed=1000 + i))
             for i in range(N_TRAIN)]
    mc = ModelConfig(D=64, n_heads=4, enc_layers=2, dec_layers=2)
    tc = TrainConfig(epochs=EPOCHS, sign_flip=True, seed=0)
    trainer = Trainer(train, mc, tc)
    history = trainer.run()
    params = trainer.params
    train_s = time.perf_counter() - t0

    held = [sample_mixture(MixtureSpec(n_speakers=2, duration_frames=T_MIX, seed=5000 + i))
            for i in range(N_EVAL)]
    out = {"history": history, "train_s": train_s, "held": held, "decodes": {}}
    for strategy, seed in [("gt", 0), ("sc", 0)]:
        out["decodes"][strategy, seed] = [
            iterative_decode(m.features, params, DecodeConfig(strategy=strategy, seed=seed + i),
                             ref_labels=m.label_matrix())
            for i, m in enumerate(held)]
    out["elapsed_s"] = time.perf_counter() - t0
    out["params"] = params
    return out


def der_of(held, results):
    reps = []
    for i, (m, r) in enumerate(zip(held, results)):
        ref = frames_to_annotation(m.speaker_activity, 0.1, recording=str(i))
        hyp = frames_to_annotation(r.speakers, 0.1, speakers=[f"h{j}" for j in range(r.n_speakers)],
                                   recording=str(i))
        reps.append(der(ref, hyp))
    return aggregate(reps).der


def test_criterion_7_end_to_end(desk_run, capsys):
    held = desk_run["held"]
    gt = der_of(held, desk_run["decodes"]["gt", 0])
    sc_results = desk_run["decodes"]["sc", 0]
    sc = der_of(held, sc_results)
    count_ok = sum(r.n_speakers == 2 for r in sc_results)
    minutes = desk_run["elapsed_s"] / 60
    ok = gt <= 0.10 and abs(sc - gt) <= 0.05 and count_ok >= 0.9 * len(held) and minutes <= 15
    report(capsys, 7, ok,
           f"GT DER {100 * gt:.2f}%, SC DER {100 * sc:.2f}%, count correct {count_ok}/{len(held)}, "
           f"final loss {desk_run['history'][-1]:.4f}, {minutes:.1f} min")


def test_criterion_8_sc_not_worse_than_init(desk_run, capsys):
    held, params = desk_run["held"], desk_run["params"]
    sc, init = [], []
    for seed in range(5):
        base = 1000 * seed
        if seed == 0:
            sc_res = desk_run["decodes"]["sc", 0]
        else:
            sc_res = [iterative_decode(m.features, params, DecodeConfig(strategy="sc", seed=base + i))
                      for i, m in enumerate(held)]
        init_res = [iterative_decode(m.features, params, DecodeConfig(strategy="init", seed=base + i))
                    for i, m in enumerate(held)]
        sc.append(der_of(held, sc_res))
        init.append(der_of(held, init_res))
    ok = np.mean(sc) <= np.mean(init)
    report(capsys, 8, ok, f"mean SC DER {100 * np.mean(sc):.2f}% vs Init {100 * np.mean(init):.2f}% over 5 seeds")


def test_criterion_9_type_identity(desk_run, capsys):
    checked = violations = 0
    for strategy_seed, results in desk_run["decodes"].items():
        for m, r in zip(desk_run["held"], results):
            rep = type_fa_miss(m.type_labels, r.types)
            for c in ("non", "sgl", "ovl"):
                ref_c = rep.ref_count[c]
                for star, plain, cnt in ((rep.fa_star(c), rep.fa(c), rep.fa_count[c]),
                                         (rep.miss_star(c), rep.miss(c), rep.miss_count[c])):
                    checked += 1
                    # exact in rationals on the counts; floats agree to rounding
                    exact_star = Fraction(100 * cnt, rep.T)
                    if plain is None:
                        violations += star != 0.0 or cnt != 0
                        continue
                    violations += exact_star != Fraction(100 * cnt, ref_c) * Fraction(ref_c, rep.T)
                    violations += abs(star - plain * ref_c / rep.T) > 1e-12
    ok = violations == 0 and checked > 0
    report(capsys, 9, ok, f"{checked} starred/unstarred pairs, {violations} violations")
