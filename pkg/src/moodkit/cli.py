"""Command-line pipeline: gen-data, train, eval, compare, synth-inspect.

Exit codes: 0 success, 2 config/validation error, 3 I/O error, 4 numerical
failure. Timestamps go to ``run_meta.json`` sidecars only, so every other
output file is byte-identical across reruns with the same inputs and seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config as runcfg, kernels
from .data_io import export_manifest, export_synthesized, generate_synthetic, load_manifest
from .errors import MoodkitError, NumericalError
from .metrics import markdown_table
from .model import forward, load_checkpoint, save_checkpoint
from .npmix import NpMixConfig, compute_prototypes, npmix_synthesize
from .trainer import comparison_markdown, evaluate_scorers, train, train_baseline_vs_a2d
from .types import SPLITS, seeded_rng

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
HIST_BINS = 50


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _sidecar(out: Path, command: str, **extra):
    meta = {"command": command, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "moodkit_version": __version__, "kernel_backend": kernels.BACKEND, **extra}
    _write(out / "run_meta.json", json.dumps(meta, indent=2) + "\n")


def _threads():
    try:
        return max(1, int(os.environ.get("MOODKIT_THREADS", "1")))
    except ValueError:
        return 1


def _data_path(args, doc):
    path = args.data or doc.get("manifest")
    if not path:
        raise runcfg.ConfigError("no dataset: pass --data or set 'manifest' in the config")
    return path


def _out(args, doc):
    out = args.out or doc.get("out")
    if not out:
        raise runcfg.ConfigError("no output directory: pass --out or set 'out' in the config")
    return Path(out)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    doc = runcfg.load(args.config)
    cfg = runcfg.synth_config(doc, args.seed)
    out = _out(args, doc)
    batch = generate_synthetic(cfg)
    manifest = export_manifest(batch, out)
    counts = ", ".join(f"{s}={manifest.split_counts[s]}" for s in SPLITS)
    print(f"classes: {cfg.id_classes} ID + {cfg.near_ood_classes} {cfg.ood_variant}-OOD; "
          f"dims: {cfg.dims}; samples: {batch.n} ({counts})")
    _sidecar(out, "gen-data", seed=cfg.seed)
    return manifest


def cmd_train(args):
    doc = runcfg.load(args.config)
    cfg = runcfg.train_config(doc, args.mode, args.seed)
    out = _out(args, doc)
    batch = load_manifest(_data_path(args, doc))

    def show(e):
        print(f"epoch {e['epoch']:3d}  total {e['total']:.5f}  cls {e['l_cls']:.5f}  "
              f"discr {e['l_discr']:.5f}  discr_syn {e['l_discr_syn']:.5f}  ent {e['l_ent']:.5f}  "
              f"val_acc {e['val_id_acc']:.4f}")

    model, log = train(batch, cfg, progress=show)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.json")
    _write(out / "train_log.jsonl", log.to_jsonl())
    _sidecar(out, "train", best_epoch=log.best_epoch,
             epoch_wall_times=[e["wall_time"] for e in log.entries])
    print(f"best epoch: {log.best_epoch}")
    return model, log


def _histogram_csv(s_id, s_ood):
    pooled = np.concatenate([s_id, s_ood])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, HIST_BINS + 1)
    h_id, _ = np.histogram(s_id, edges)
    h_ood, _ = np.histogram(s_ood, edges)
    lines = ["bin,bin_lo,bin_hi,id_count,ood_count"]
    for i in range(HIST_BINS):
        lines.append(f"{i},{'%.17g' % edges[i]},{'%.17g' % edges[i + 1]},{h_id[i]},{h_ood[i]}")
    return "\n".join(lines) + "\n"


def _scores_csv(kind, batch, s_id, s_ood):
    lines = ["sample_id,split,label,score,scorer_kind"]
    for split, scores in (("id_test", s_id), ("ood_test", s_ood)):
        rows = np.flatnonzero(batch.splits == split)
        for r, s in zip(rows, scores):
            lines.append(f"{r},{split},{batch.labels[r]},{'%.17g' % s},{kind}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    doc = runcfg.load(args.config)
    kinds, scfg, overrides = runcfg.scorer_settings(doc, args.scorers)
    out = _out(args, doc)
    batch = load_manifest(_data_path(args, doc))
    model = load_checkpoint(args.checkpoint)
    if model.input_dims != batch.dims:
        raise runcfg.ConfigError(f"checkpoint expects modality dims {model.input_dims}, "
                                 f"data has {batch.dims}")
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reports, scores = evaluate_scorers(model, batch, kinds, scfg, overrides, ex)
    else:
        reports, scores = evaluate_scorers(model, batch, kinds, scfg, overrides)
    for kind in sorted(reports):
        _write(out / "reports" / f"{kind}.json", reports[kind].to_json() + "\n")
        s_id, s_ood = scores[kind]
        _write(out / "scores" / f"{kind}.csv", _scores_csv(kind, batch, s_id, s_ood))
        _write(out / "histograms" / f"{kind}.csv", _histogram_csv(s_id, s_ood))
    table = markdown_table(reports.values())
    _write(out / "results.md", table)
    print(table, end="")
    _sidecar(out, "eval", scorers=sorted(reports))
    return reports


def cmd_compare(args):
    doc = runcfg.load(args.config)
    cfg = runcfg.train_config(doc, "a2d", args.seed)
    kinds, scfg, overrides = runcfg.scorer_settings(doc, args.scorers)
    out = _out(args, doc)
    batch = load_manifest(_data_path(args, doc))
    tau = doc.get("compare", {}).get("logitnorm_tau", 0.04)
    record = train_baseline_vs_a2d(batch, cfg, kinds, scfg, overrides, logitnorm_tau=tau)
    text = comparison_markdown(record)
    _write(out / "comparison.md", text)
    payload = {block: {k: r.to_dict() for k, r in reps.items()}
               for block, reps in record.reports.items()}
    payload["discrepancy"] = {b: dict(zip(("l_id", "l_ood", "delta"), record.discrepancy(b)))
                              for b in record.reports}
    _write(out / "comparison.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    _sidecar(out, "compare")
    return record


def cmd_synth_inspect(args):
    doc = runcfg.load(args.config)
    cfg = runcfg.train_config(doc, "a2d+npmix", args.seed)
    out = _out(args, doc)
    batch = load_manifest(_data_path(args, doc))
    model = load_checkpoint(args.checkpoint)
    train_set = batch.split("id_train")
    pool = forward(model, train_set).joint_embedding
    protos = compute_prototypes(pool, train_set.labels, batch.num_classes)
    npcfg = cfg.npmix or NpMixConfig()
    synth = npmix_synthesize(pool, train_set.labels, protos, npcfg, seeded_rng(cfg.seed),
                             count=args.count)
    export_synthesized(synth, model.embed_dims, out)
    print(f"wrote {len(synth)} synthesized outliers to {out}")
    _sidecar(out, "synth-inspect")
    return synth


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="moodkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if data:
            sp.add_argument("--data", help="dataset manifest (file or directory)")

    sp = sub.add_parser("gen-data", help="generate a synthetic multimodal dataset")
    common(sp, data=False)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--mode", choices=runcfg.MODES)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="fit and evaluate post-hoc scorers")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scorers", help="comma-separated scorer names")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="baseline vs A2D vs A2D+NP-Mix")
    common(sp)
    sp.add_argument("--scorers", help="comma-separated scorer names")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("synth-inspect", help="dump NP-Mix outliers for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--count", type=int, default=256)
    sp.set_defaults(func=cmd_synth_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MoodkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
