"""``aedd`` command line: simulate, train, infer, score, experiment, features.

Exit codes: 0 success, 2 usage or invalid input, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import numerics
from .container import read_container, write_container
from .decode import STRATEGIES, DecodeConfig, iterative_decode
from .errors import AeddError, ContainerError, InputError, NumericError
from .features import FeatureSequence, extract_features, read_wav
from .model import N_TYPES
from .score import (
    TYPE_NAMES,
    aggregate,
    aggregate_types,
    annotation_to_frames,
    der,
    frames_to_annotation,
    read_rttm,
    type_fa_miss,
    write_rttm,
)
from .simulate import LabeledMixture, MixtureSpec, derive_type_labels, sample_mixture
from .train import Trainer, load_checkpoint, load_model, save_checkpoint, save_model

log = logging.getLogger("aedd")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


# flag dest -> "section.key"
_FLAG_KEYS = {
    "seed": "run.seed", "precision": "run.precision", "workers": "run.workers",
    "speakers": "sim.n_speakers", "num": "sim.num", "frames": "sim.frames",
    "overlap_bias": "sim.overlap_bias", "mean_utt": "sim.mean_utt_frames",
    "mean_gap": "sim.mean_gap_frames",
    "d_model": "model.D", "heads": "model.n_heads", "enc_layers": "model.enc_layers",
    "dec_layers": "model.dec_layers", "ffn_dim": "model.ffn_dim", "dropout": "model.dropout",
    "epochs": "train.epochs", "batch_size": "train.batch_size", "lr_scale": "train.lr_scale",
    "warmup": "train.warmup_steps", "zero_drop": "train.zero_drop_p",
    "l_enroll_min": "train.L_enroll_min", "l_enroll_max": "train.L_enroll_max",
    "checkpoint_every": "train.checkpoint_every", "grad_clip": "train.grad_clip",
    "strategy": "decode.strategy", "l_enroll": "decode.L_enroll", "l_stop": "decode.L_stop",
    "threshold": "decode.threshold", "oracle_speakers": "decode.oracle_num_speakers",
    "max_speakers": "decode.max_speakers", "median_width": "decode.median_width",
    "collar": "score.collar", "fa_denominator": "score.fa_denominator",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p):
    p.add_argument("--d-model", dest="d_model", type=_positive_int)
    p.add_argument("--heads", type=_positive_int)
    p.add_argument("--enc-layers", type=_positive_int)
    p.add_argument("--dec-layers", type=_positive_int)
    p.add_argument("--ffn-dim", type=_positive_int)
    p.add_argument("--dropout", type=float)


def _decode_flags(p):
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--l-enroll", type=_positive_int)
    p.add_argument("--l-stop", type=_positive_int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--oracle-speakers", type=_positive_int)
    p.add_argument("--max-speakers", type=_positive_int)
    p.add_argument("--median-width", type=_positive_int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aedd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labelled dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=_positive_int)
    p.add_argument("--num", type=_positive_int)
    p.add_argument("--frames", type=_positive_int)
    p.add_argument("--overlap-bias", type=float)
    p.add_argument("--mean-utt", type=float)
    p.add_argument("--mean-gap", type=float)

    p = sub.add_parser("train", help="teacher-forced training")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", required=True, help="dataset manifest (manifest.jsonl)")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--lr-scale", type=float)
    p.add_argument("--warmup", type=_positive_int)
    p.add_argument("--zero-drop", type=float)
    p.add_argument("--l-enroll-min", type=_positive_int)
    p.add_argument("--l-enroll-max", type=_positive_int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--grad-clip", type=float)

    p = sub.add_parser("infer", help="iterative decoding to RTTM")
    _common(p)
    _decode_flags(p)
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset manifest")
    src.add_argument("--wav", nargs="+", help="mono 16-bit PCM WAV files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="DER and speech-type metrics")
    _common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref-types", help="reference speech-type RTTM (speakers non/sgl/ovl)")
    p.add_argument("--hyp-types", help="hypothesis speech-type RTTM")
    p.add_argument("--collar", type=float)
    p.add_argument("--fa-denominator", choices=("ref", "complement"))
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("experiment", help="compare decoding strategies on a dataset")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    p.add_argument("--collar", type=float)

    p = sub.add_parser("features", help="extract log-mel features from WAV files")
    _common(p)
    p.add_argument("--wav", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cmvn", action="store_true")
    return parser


def resolve_config(args) -> config_mod.RunConfig:
    overrides = {}
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[key] = v
    return config_mod.build(getattr(args, "config", None), overrides)


def _echo_config(cfg, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.toml").write_text(config_mod.dumps(cfg))
    log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))


# --------------------------------------------------------------------------
# datasets


def save_mixture(path, mix: LabeledMixture, spec_dict: dict) -> None:
    meta = {"kind": "mixture", "seed": mix.seed, "S": mix.n_speakers, "T": mix.T,
            "frame_shift_s": mix.features.frame_shift_s, "spec": spec_dict}
    write_container(path, meta, {
        "features": mix.features.frames.astype("<f8"),
        "speaker_activity": mix.speaker_activity.astype("|u1"),
        "type_labels": mix.type_labels.astype("|u1"),
    })


def load_mixture(path) -> LabeledMixture:
    meta, arrays = read_container(path)
    if meta.get("kind") != "mixture":
        raise ContainerError(f"{path}: not a mixture shard")
    act = arrays["speaker_activity"]
    return LabeledMixture(FeatureSequence(arrays["features"], meta.get("frame_shift_s", 0.1)),
                          act, arrays.get("type_labels", derive_type_labels(act)), meta.get("seed", 0))


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ContainerError(f"cannot read manifest {path}: {exc}") from None
    rows = []
    for line in lines:
        if line.strip():
            row = json.loads(line)
            row["path"] = str((path.parent / row["path"]).resolve()) \
                if not Path(row["path"]).is_absolute() else row["path"]
            rows.append(row)
    return rows


def _recording_id(row: dict, i: int) -> str:
    return row.get("id") or Path(row["path"]).stem or f"rec{i}"


def _sim_one(job):
    out_dir, i, spec = job
    mix = sample_mixture(spec)
    rel = f"shards/mix_{i:05d}.aedd"
    save_mixture(out_dir / rel, mix, dataclasses.asdict(spec))
    return {"id": f"mix_{i:05d}", "path": rel, "S": mix.n_speakers, "T": mix.T, "seed": spec.seed}, mix


def _pool_map(fn, jobs, workers, initializer=None, initargs=()):
    if workers <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=initializer, initargs=initargs) as ex:
        return list(ex.map(fn, jobs))


def mixture_seed(base: int, i: int) -> int:
    return base * 100_000 + i


def cmd_simulate(args, cfg) -> int:
    out = Path(args.out)
    _echo_config(cfg, out)
    sc = cfg.sim
    jobs = []
    for i in range(sc.num):
        spec = MixtureSpec(n_speakers=sc.n_speakers, duration_frames=sc.frames,
                           mean_utt_frames=sc.mean_utt_frames, mean_gap_frames=sc.mean_gap_frames,
                           overlap_bias=sc.overlap_bias, noise_spread=sc.noise_spread,
                           within_spread=sc.within_spread, feature_dim=sc.feature_dim,
                           seed=mixture_seed(cfg.run.seed, i))
        jobs.append((out, i, spec))
    results = _pool_map(_sim_one, jobs, cfg.run.workers)
    refs, types = [], []
    with open(out / "manifest.jsonl", "w") as f:
        for row, mix in results:
            f.write(json.dumps(row, sort_keys=True) + "\n")
            refs.append(frames_to_annotation(mix.speaker_activity, 0.1,
                                             [f"spk{s}" for s in range(mix.n_speakers)], row["id"]))
            types.append(frames_to_annotation(mix.type_labels, 0.1, TYPE_NAMES, row["id"]))
    write_rttm(out / "ref.rttm", refs)
    write_rttm(out / "ref_types.rttm", types)
    print(f"wrote {len(results)} mixtures to {out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    out = Path(args.out)
    _echo_config(cfg, out)
    mixtures = [load_mixture(r["path"]) for r in read_manifest(args.data)]
    log_file = open(out / "train_log.jsonl", "a")
    try:
        if args.resume:
            ck = load_checkpoint(args.resume)
            if args.epochs is not None:
                ck.train_cfg.epochs = args.epochs
            trainer = Trainer.resume(mixtures, ck, log=log_file)
        else:
            trainer = Trainer(mixtures, cfg.model, cfg.train, log=log_file)

        def on_ck(tr):
            path = out / f"ckpt_step{tr.opt.step:07d}.aedd"
            save_checkpoint(path, tr.checkpoint())
            save_checkpoint(out / "latest.aedd", tr.checkpoint())
            log.info("epoch %d step %d: checkpoint %s", tr.epoch, tr.opt.step, path.name)

        try:
            hist = trainer.run(on_checkpoint=on_ck)
        except NumericError as exc:
            diag = dict(exc.diagnostics, error=str(exc))
            (out / "nan_diagnostic.json").write_text(json.dumps(diag, indent=2, sort_keys=True))
            raise
    finally:
        log_file.close()
    save_model(out / "model.aedd", trainer.params)
    last = f"{hist[-1]:.4f}" if hist else "n/a"
    print(f"trained to epoch {trainer.epoch} (step {trainer.opt.step}); last epoch loss {last}")
    return EXIT_OK


_worker_params = None


def _init_decode_worker(model_path, precision):
    global _worker_params
    numerics.set_precision(precision)
    _worker_params = load_model(model_path)


def _decode_one(job):
    rec, source, dcfg = job
    if isinstance(source, str) and source.endswith(".aedd"):
        mix = load_mixture(source)
        feats, ref = mix.features, mix.label_matrix()
    else:
        feats, ref = extract_features(read_wav(source)), None
    res = iterative_decode(feats, _worker_params, dcfg, ref_labels=ref)
    return rec, feats.frame_shift_s, res


def _decode_jobs(args, cfg):
    jobs = []
    if args.data:
        rows = read_manifest(args.data)
        sources = [(_recording_id(r, i), r["path"]) for i, r in enumerate(rows)]
    else:
        if cfg.decode.strategy == "gt":
            raise InputError("--strategy gt needs reference labels; use --data with a labelled manifest")
        sources = [(Path(w).stem, str(w)) for w in args.wav]
    for i, (rec, src) in enumerate(sources):
        jobs.append((rec, src, dataclasses.replace(cfg.decode, seed=mixture_seed(cfg.run.seed, i))))
    return jobs


def _run_decode(args, cfg, jobs):
    return _pool_map(_decode_one, jobs, cfg.run.workers, _init_decode_worker,
                     (args.model, cfg.run.precision))


def cmd_infer(args, cfg) -> int:
    out = Path(args.out)
    jobs = _decode_jobs(args, cfg)
    _echo_config(cfg, out)
    hyps, types = [], []
    with open(out / "decode_report.jsonl", "w") as f:
        for rec, shift, res in _run_decode(args, cfg, jobs):
            names = [f"spk{s}" for s in range(res.n_speakers)]
            hyps.append(frames_to_annotation(res.speakers, shift, names, rec))
            types.append(frames_to_annotation(res.types, shift, TYPE_NAMES, rec))
            f.write(json.dumps(dict(recording=rec, strategy=cfg.decode.strategy, **res.report()),
                               sort_keys=True) + "\n")
    write_rttm(out / "hyp.rttm", hyps)
    write_rttm(out / "hyp_types.rttm", types)
    print(f"decoded {len(hyps)} recordings with strategy {cfg.decode.strategy}")
    return EXIT_OK


def _score_one(job):
    rec, ref, hyp, collar = job
    return rec, der(ref, hyp, collar)


def _type_reports(ref_path, hyp_path, fa_denominator, shift=0.1):
    refs, hyps = read_rttm(ref_path), read_rttm(hyp_path)
    out = {}
    for rec, ref in refs.items():
        hyp = hyps.get(rec)
        n = int(round(ref.duration / shift))
        if hyp is not None:
            n = max(n, int(round(hyp.duration / shift)))
        R, _ = annotation_to_frames(ref, shift, n, TYPE_NAMES)
        H = annotation_to_frames(hyp, shift, n, TYPE_NAMES)[0] if hyp else np.zeros_like(R)
        out[rec] = type_fa_miss(R, H, shift, fa_denominator)
    return out


def format_der_table(rows) -> str:
    head = f"{'recording':<20} {'DER%':>7} {'MISS%':>7} {'FA%':>7} {'CONF%':>7} {'speech_s':>9}"
    lines = [head, "-" * len(head)]
    for rec, r in rows:
        s = r.scored_speech_s or float("nan")
        lines.append(f"{rec:<20} {100 * r.der:7.2f} {100 * r.miss_s / s:7.2f} "
                     f"{100 * r.fa_s / s:7.2f} {100 * r.confusion_s / s:7.2f} {r.scored_speech_s:9.2f}")
    return "\n".join(lines)


def format_type_table(rep) -> str:
    def cell(v):
        return "    n/a" if v is None else f"{v:7.2f}"

    lines = [f"{'':8}" + "".join(f"{c + ' FA':>9}{c + ' MISS':>10}" for c in TYPE_NAMES)]
    lines.append(f"{'':8}" + "".join(f"{cell(rep.fa(c)):>9}{cell(rep.miss(c)):>10}" for c in TYPE_NAMES))
    lines.append(f"{'starred':8}" + "".join(f"{rep.fa_star(c):9.2f}{rep.miss_star(c):10.2f}"
                                            for c in TYPE_NAMES))
    return "\n".join(lines)


def cmd_score(args, cfg) -> int:
    refs, hyps = read_rttm(args.ref), read_rttm(args.hyp)
    from .score import Annotation
    jobs = [(rec, ref, hyps.get(rec, Annotation(rec)), cfg.score.collar)
            for rec, ref in sorted(refs.items())]
    rows = _pool_map(_score_one, jobs, cfg.run.workers)
    total = aggregate(r for _, r in rows)
    report = {"collar": cfg.score.collar,
              "recordings": {rec: r.to_dict() for rec, r in rows},
              "aggregate": total.to_dict()}
    print(format_der_table(rows + [("ALL", total)]))
    if args.ref_types and args.hyp_types:
        treps = _type_reports(args.ref_types, args.hyp_types, cfg.score.fa_denominator)
        tagg = aggregate_types(treps.values())
        report["types"] = {"recordings": {k: v.to_dict() for k, v in treps.items()},
                           "aggregate": tagg.to_dict()}
        print()
        print(format_type_table(tagg))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args, cfg) -> int:
    out = Path(args.out)
    _echo_config(cfg, out)
    rows = read_manifest(args.data)
    mixtures = [(_recording_id(r, i), r["path"]) for i, r in enumerate(rows)]
    refs = {}
    for rec, path in mixtures:
        mix = load_mixture(path)
        refs[rec] = (mix, frames_to_annotation(mix.speaker_activity, 0.1, None, rec))
    table = {}
    type_rep = None
    for strategy in args.strategies:
        for oracle in ((None,) if strategy == "gt" else (None, "ref")):
            jobs = []
            for i, (rec, path) in enumerate(mixtures):
                n_oracle = refs[rec][0].n_speakers if oracle else None
                dcfg = dataclasses.replace(cfg.decode, strategy=strategy, oracle_num_speakers=n_oracle,
                                           seed=mixture_seed(cfg.run.seed, i))
                jobs.append((rec, path, dcfg))
            results = _run_decode(args, cfg, jobs)
            reports, correct, treps = [], 0, []
            for rec, shift, res in results:
                mix, ref = refs[rec]
                hyp = frames_to_annotation(res.speakers, shift, [f"h{s}" for s in range(res.n_speakers)], rec)
                reports.append(der(ref, hyp, cfg.score.collar))
                correct += res.n_speakers == mix.n_speakers
                treps.append(type_fa_miss(mix.type_labels, res.types, shift, cfg.score.fa_denominator))
            agg = aggregate(reports)
            key = f"{strategy}/{'oracle' if oracle else 'estimated'}"
            table[key] = {"der": agg.der, "count_accuracy": correct / len(results),
                          "miss_s": agg.miss_s, "fa_s": agg.fa_s, "confusion_s": agg.confusion_s}
            type_rep = aggregate_types(treps)
    lines = [f"{'#spk':<10}" + "".join(f"{s:>9}" for s in args.strategies)]
    for mode in ("estimated", "oracle"):
        cells = []
        for s in args.strategies:
            v = table.get(f"{s}/{mode}")
            cells.append(f"{'-':>9}" if v is None else f"{100 * v['der']:9.2f}")
        lines.append(f"{mode:<10}" + "".join(cells))
    summary = "DER (%) by decoding strategy\n" + "\n".join(lines)
    if type_rep is not None:
        summary += "\n\nspeech-type prediction (%)\n" + format_type_table(type_rep)
    print(summary)
    (out / "summary.txt").write_text(summary + "\n")
    (out / "experiment.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_features(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for w in args.wav:
        feats = extract_features(read_wav(w), normalize=args.cmvn)
        write_container(out / f"{Path(w).stem}.aedd",
                        {"kind": "features", "frame_shift_s": feats.frame_shift_s, "source": str(w)},
                        {"features": feats.frames})
    print(f"wrote features for {len(args.wav)} files to {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "infer": cmd_infer,
    "score": cmd_score, "experiment": cmd_experiment, "features": cmd_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        numerics.set_precision(cfg.run.precision)
        return COMMANDS[args.command](args, cfg)
    except NumericError as exc:
        print(f"aedd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContainerError, OSError) as exc:
        print(f"aedd: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InputError, AeddError, ValueError) as exc:
        print(f"aedd: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
