"""Command-line interface.

Subcommands: synth, segment, features, quantize, ulm, bench, metrics,
pipeline, report. Exit codes: 0 success, 2 invalid configuration or
arguments, 3 stage failure (including fingerprint mismatches).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, dsp, metrics, quantizer
from .errors import ConfigError, FingerprintMismatchError, StageFailureError, VocalmError
from .manifest import RunConfig, read_manifest, split_manifest, write_manifest
from .pipeline import pipeline_run, validate_report
from .segmenter import DetectorParams, detect_calls, pack_windows
from .synthlab import CallSpec, MarkovChain, SceneSpec, markov_corpus, synth_scene
from .ulm import AddK, AttnLM, ContextPolicy, KneserNey, NGramLM, generate, ppl, train_ngram, train_probe

log = logging.getLogger("vocalm")


def _context_policy(args) -> ContextPolicy | None:
    if args.ctx is None:
        return None if args.keep_first == 0 else ContextPolicy(window=None, keep_first=0)
    return ContextPolicy(window=args.ctx, keep_first=args.keep_first)


def _add_ctx_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ctx", type=int, default=None, help="context window in tokens (default unlimited)")
    p.add_argument("--keep-first", type=int, default=0, choices=(0, 1, 5), help="always-visible first tokens")


# -- synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    out = Path(args.out)
    if args.what == "scene":
        calls = tuple(
            (
                c["onset_s"],
                CallSpec(
                    f0_hz=c.get("f0_hz", 7000.0),
                    duration_s=c.get("duration_s", 1.0),
                    fm_depth_hz=c.get("fm_depth_hz", 150.0),
                    fm_rate_hz=c.get("fm_rate_hz", 1.0),
                    amplitude=c.get("amplitude", 0.5),
                ),
            )
            for c in spec.get("calls", [])
        )
        scene = SceneSpec(
            total_s=spec["total_s"],
            calls=calls,
            noise_floor_db=spec.get("noise_floor_db", -55.0),
            seed=args.seed,
        )
        wave, truth = synth_scene(scene)
        out.parent.mkdir(parents=True, exist_ok=True)
        dsp.write_wav(out, wave)
        truth_path = out.with_suffix(".truth.json")
        with open(truth_path, "w") as fh:
            json.dump(
                {"path": str(out), "calls": [{"onset_s": c.onset_s, "offset_s": c.offset_s} for c in truth]},
                fh,
                sort_keys=True,
            )
        print(f"wrote {out} and {truth_path}")
    else:  # corpus
        chain = MarkovChain(np.array(spec["pi"], dtype=float), np.array(spec["P"], dtype=float))
        seqs = markov_corpus(chain, args.n_seqs, args.length, seed=args.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        quantizer.write_units(out, seqs)
        print(f"wrote {len(seqs)} sequences to {out}")
    return 0


# -- segment --------------------------------------------------------------


def _detector_from_file(path) -> DetectorParams:
    if not path:
        return DetectorParams()
    with open(path) as fh:
        obj = json.load(fh)
    d = obj.get("detector", obj)
    allowed = {
        "energy_floor", "noise_var_max", "noise_density_min",
        "noise_dur_band", "call_dur_band", "highpass_hz", "boundary_comp_s",
    }
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown detector parameter(s): {sorted(unknown)}")
    for key in ("noise_dur_band", "call_dur_band"):
        if key in d:
            d[key] = tuple(d[key])
    return DetectorParams(**d)


def cmd_segment(args) -> int:
    params = _detector_from_file(args.params)
    src = Path(args.input)
    paths = sorted(src.glob("*.wav")) if src.is_dir() else [src]
    if not paths:
        raise ConfigError(f"no wav files under {src}")
    with open(args.out, "w") as fh:
        for path in paths:
            wave = dsp.read_wav(path)
            if wave.sample_rate != dsp.DEFAULT_SAMPLE_RATE:
                wave = dsp.decimate(wave, dsp.DEFAULT_SAMPLE_RATE)
            calls = detect_calls(wave, params)
            for win in pack_windows(wave, calls):
                fh.write(
                    json.dumps(
                        {
                            "source": str(path),
                            "start_s": win.start_s,
                            "end_s": win.end_s,
                            "calls": [{"onset_s": c.onset_s, "offset_s": c.offset_s} for c in win.calls],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    print(f"segmented {len(paths)} file(s) -> {args.out}")
    return 0


# -- features / quantize ----------------------------------------------------


def cmd_features(args) -> int:
    wave = dsp.read_wav(args.input)
    if args.kind == "linear_fb":
        fm = dsp.linear_fb(wave, args.lo_hz, args.hi_hz, args.n_coeffs)
    else:
        fm = dsp.mfcc(wave, args.n_coeffs)
    if args.pool:
        pooled = dsp.pool_stats(fm)
        fm = dsp.FeatureMatrix(pooled.vector[None, :], feature_kind=f"{args.kind}_pooled")
    dsp.write_features_csv(args.out, fm)
    print(f"wrote {fm.n_frames}x{fm.dim} {fm.feature_kind} features to {args.out}")
    return 0


def cmd_quantize(args) -> int:
    if args.what == "fit":
        rows = [dsp.read_features_csv(p).rows for p in args.features]
        cb = quantizer.fit_codebook(
            np.vstack(rows),
            k=args.k,
            minibatch=args.minibatch,
            restarts=args.restarts,
            seed=args.seed,
        )
        quantizer.save_codebook(args.out, cb)
        print(f"fit K={cb.k} codebook on {sum(r.shape[0] for r in rows)} frames -> {args.out}")
    else:  # encode
        cb = quantizer.load_codebook(args.codebook)
        seqs = [quantizer.encode(dsp.read_features_csv(p), cb) for p in args.features]
        if args.dedup:
            # run-length collapse for the dedup ablation; run lengths are dropped
            seqs = [np.array([t for t, _ in quantizer.dedup(s)], dtype=np.int32) for s in seqs]
        quantizer.write_units(args.out, seqs)
        print(f"encoded {len(seqs)} sequence(s) -> {args.out}")
    return 0


# -- ulm --------------------------------------------------------------------


def _load_model(path: str):
    if path.endswith(".npz"):
        return AttnLM.load(path)
    return NGramLM.load(path)


def cmd_ulm(args) -> int:
    if args.what == "train":
        corpus = [u for u in quantizer.read_units(args.units) if u.size]
        if args.backend == "ngram":
            smoothing = KneserNey(args.discount) if args.smoothing == "kneser_ney" else AddK(args.add_k)
            model = train_ngram(corpus, args.order, smoothing, vocab_size=args.vocab_size)
            model.save(args.out)
        else:
            vocab = args.vocab_size or int(max(u.max() for u in corpus)) + 1
            model = AttnLM(vocab, seed=args.seed)
            from .ulm import attn_train

            attn_train(model, corpus, steps=args.steps, lr=args.lr, batch=args.batch, seed=args.seed)
            model.save(args.out)
        print(f"trained {args.backend} model -> {args.out}")
    elif args.what == "score":
        model = _load_model(args.model)
        cp = _context_policy(args)
        for seq in quantizer.read_units(args.units):
            print(model.score(seq, cp))
    elif args.what == "ppl":
        model = _load_model(args.model)
        corpus = [u for u in quantizer.read_units(args.units) if u.size]
        print(json.dumps({"ppl": ppl(model, corpus, _context_policy(args)), "n_sequences": len(corpus)}))
    elif args.what == "generate":
        model = _load_model(args.model)
        prompt = [int(t) for t in args.prompt.split()] if args.prompt else []
        out = generate(model, prompt, beam=args.beam, temperature=args.temperature, max_len=args.max_len)
        print(" ".join(str(int(t)) for t in out))
    else:  # probe
        emb = dsp.read_features_csv(args.embeddings).rows
        with open(args.labels) as fh:
            labels = np.array([int(line.strip()) for line in fh if line.strip()])
        result = train_probe(emb, labels, epochs=args.epochs, seed=args.seed)
        recall, precision, f1 = result.val_metrics
        print(json.dumps({"recall": recall, "precision": precision, "f1": f1}))
    return 0


# -- bench --------------------------------------------------------------------


def cmd_bench(args) -> int:
    if args.what == "make":
        corpus = [u for u in quantizer.read_units(args.units) if u.size]
        pairs = bench.unit_pairs_from_corpus(corpus, args.task, seed=args.seed)
        bench.write_pairs_jsonl(args.out, pairs)
        print(f"wrote {len(pairs)} {args.task} pairs -> {args.out}")
    elif args.what == "phee":
        records = bench.read_phee_jsonl(args.records)
        pairs = bench.make_phee_pairs(records, args.mode, seed=args.seed, per_record=args.per_record)
        bench.write_pairs_jsonl(args.out, pairs)
        print(f"wrote {len(pairs)} {args.mode} pairs -> {args.out}")
    else:  # eval
        model = _load_model(args.model)
        pairs, _ = bench.read_pairs_jsonl(args.pairs)
        res = bench.pairwise_eval(model, pairs, _context_policy(args))
        print(json.dumps({"accuracy": res.accuracy, "n": res.n_pairs, "by_task": res.by_task}))
    return 0


# -- metrics --------------------------------------------------------------------


def _manifest_embeddings(path: str, kind: str, embedding: str):
    records = read_manifest(path)
    embs = []
    for rec in records:
        wave = dsp.read_wav(rec.path)
        fm = dsp.linear_fb(wave) if kind == "linear_fb" else dsp.mfcc(wave)
        embs.append(metrics.clip_embedding(fm, embedding))
    return embs


def cmd_metrics(args) -> int:
    if args.what == "fad":
        config = {"features": args.kind, "embedding": args.embedding}
        ref = metrics.fit_gaussian(_manifest_embeddings(args.ref, args.kind, args.embedding))
        cand = metrics.fit_gaussian(_manifest_embeddings(args.cand, args.kind, args.embedding))
        value = metrics.fad(ref, cand)
        print(
            json.dumps(
                {
                    "metric": "fad",
                    "value": value,
                    "n": {"ref": ref.n, "cand": cand.n},
                    "config_fingerprint": _dict_fingerprint(config),
                }
            )
        )
    else:  # purity
        units = quantizer.read_units(args.units)
        with open(args.labels) as fh:
            labels = [int(line.strip()) for line in fh if line.strip()]
        if args.level == "frame":
            flat_units = np.concatenate([u for u in units if u.size])
            if len(labels) != flat_units.shape[0]:
                raise ConfigError(
                    f"frame-level purity needs one label per frame: {flat_units.shape[0]} frames vs {len(labels)} labels"
                )
            table = metrics.contingency_from_frames(flat_units, labels)
        else:
            if len(labels) != len(units):
                raise ConfigError("call-level purity needs one label per sequence")
            table = metrics.contingency_from_calls(units, labels)
        up, lp = metrics.purity(table)
        print(
            json.dumps(
                {
                    "metric": "purity",
                    "value": {"unit_purity": up, "label_purity": lp},
                    "n": table.total,
                    "config_fingerprint": _dict_fingerprint({"level": args.level}),
                }
            )
        )
    return 0


def _dict_fingerprint(obj: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# -- pipeline / report ---------------------------------------------------------


def cmd_pipeline(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_dict({})
    if args.seed is not None:
        data = dict(cfg.data)
        data["seed"] = args.seed
        cfg = RunConfig.from_dict(data)
    report = pipeline_run(cfg, args.out_dir, jobs=args.jobs)
    print(json.dumps({"report": str(Path(args.out_dir) / "report.json"), "tasks": report["tasks"]}))
    return 0


def cmd_split(args) -> int:
    records = read_manifest(args.manifest)
    ratios = tuple(float(x) for x in args.ratios.split("/"))
    if max(ratios) > 1:
        ratios = tuple(r / 100.0 for r in ratios)
    out = split_manifest(records, ratios, seed=args.seed)
    write_manifest(args.out, out)
    counts = {s: sum(1 for r in out if r.split == s) for s in ("train", "valid", "test")}
    print(json.dumps(counts))
    return 0


def cmd_report(args) -> int:
    with open(args.path) as fh:
        report = json.load(fh)
    if report.get("partial"):
        print(f"PARTIAL report: stage {report['failed_stage']!r} failed: {report['error']}")
        return 3
    validate_report(report)
    print(f"vocalm report  (config {report['config_fingerprint']}, seed {report['seed']})")
    seg = report["segmentation"]
    print(f"  segmentation: precision {seg['precision']:.3f}  recall {seg['recall']:.3f}  ({seg['n_scenes']} scenes)")
    ppl_value = report["ppl"]["value"]
    ppl_text = f"{ppl_value:.4f}" if ppl_value is not None else "n/a (no held-out units)"
    print(f"  ppl ({report['ppl']['model']}): {ppl_text}")
    print("  task accuracies:")
    for task, stats in sorted(report["tasks"].items()):
        print(f"    {task:16s} {stats['accuracy']:.4f}  (n={stats['n']})")
    print("  fad (" + report["fad"]["embedding"] + "):")
    for name, value in report["fad"]["values"].items():
        print(f"    {name:16s} {value:.4f}")
    pur = report["purity"]
    print(
        f"  purity: frame unit={pur['frame']['unit_purity']:.3f} label={pur['frame']['label_purity']:.3f}"
        f" | call unit={pur['call']['unit_purity']:.3f} label={pur['call']['label_purity']:.3f}"
    )
    probe = report["probe"]
    print(f"  probe: recall {probe['recall']:.3f}  precision {probe['precision']:.3f}  f1 {probe['f1']:.3f}")
    if "context_grid" in report:
        print("  context grid:")
        for row in report["context_grid"]:
            ctx = "inf" if row["context"] is None else row["context"]
            cells = "  ".join(
                f"{t}={row[t]:.3f}" for t in ("shuffle", "concat", "reversal") if t in row
            )
            print(f"    ctx={ctx:>4} keep={row['keep_first']}: {cells}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocalm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vocalm {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthetic scenes and Markov corpora")
    p.add_argument("what", choices=("scene", "corpus"))
    p.add_argument("--spec", required=True, help="JSON spec (scene layout or {pi, P} chain)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-seqs", type=int, default=10)
    p.add_argument("--length", type=int, default=100)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("segment", help="detect calls and pack 10 s windows")
    p.add_argument("--in", dest="input", required=True, help="wav file or directory")
    p.add_argument("--params", default=None, help="JSON file with detector parameters")
    p.add_argument("--out", required=True, help="output JSONL")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("features", help="MFCC or linear filterbank features")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kind", choices=("mfcc", "linear_fb"), default="linear_fb")
    p.add_argument("--n-coeffs", type=int, default=13)
    p.add_argument("--lo-hz", type=float, default=5000.0)
    p.add_argument("--hi-hz", type=float, default=8000.0)
    p.add_argument("--pool", action="store_true", help="emit one pooled mean+variance row instead of frames")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("quantize", help="fit or apply a unit codebook")
    p.add_argument("what", choices=("fit", "encode"))
    p.add_argument("--features", nargs="+", required=True, help="feature CSV file(s)")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--minibatch", type=int, default=10_000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--codebook")
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("ulm", help="unit language models")
    p.add_argument("what", choices=("train", "score", "ppl", "generate", "probe"))
    p.add_argument("--units")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--backend", choices=("ngram", "attn"), default="ngram")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing", choices=("kneser_ney", "add_k"), default="kneser_ney")
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--add-k", type=float, default=1.0)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompt", default="")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--temperature", type=float, default=1.5)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--embeddings")
    p.add_argument("--labels")
    p.add_argument("--epochs", type=int, default=20)
    _add_ctx_flags(p)
    p.set_defaults(fn=cmd_ulm)

    p = sub.add_parser("bench", help="zero-shot benchmark pairs and evaluation")
    p.add_argument("what", choices=("make", "phee", "eval"))
    p.add_argument("--units")
    p.add_argument("--task", choices=("shuffle", "concat", "reversal"), default="shuffle")
    p.add_argument("--records", help="phee manifest JSONL")
    p.add_argument("--mode", choices=("caller_change", "receiver_change"), default="caller_change")
    p.add_argument("--per-record", type=int, default=5)
    p.add_argument("--model")
    p.add_argument("--pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_ctx_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("metrics", help="FAD and purity")
    p.add_argument("what", choices=("fad", "purity"))
    p.add_argument("--ref", help="reference manifest JSONL")
    p.add_argument("--cand", help="candidate manifest JSONL")
    p.add_argument("--kind", choices=("mfcc", "linear_fb"), default="linear_fb")
    p.add_argument("--embedding", choices=("mv", "mvs"), default="mv")
    p.add_argument("--units")
    p.add_argument("--labels")
    p.add_argument("--level", choices=("frame", "call"), default="frame")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("split", help="stratified train/valid/test manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="80/10/10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("pipeline", help="run the full synthetic pipeline")
    p.add_argument("--config", default=None, help="JSON config (defaults apply)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("report", help="validate and render a report")
    p.add_argument("--path", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    except (StageFailureError, FingerprintMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except VocalmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
