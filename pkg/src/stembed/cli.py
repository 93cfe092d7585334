"""Command-line front end.

Exit codes: 0 success, 1 check failure, 2 usage or input error. Machine
readable results go to stdout as JSON, diagnostics to stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import causal_stream as cs
from . import gradcheck, io
from .clustering_tracker import TrackStore, segment_frame
from .config import EMBEDDING_DIM, load_config
from .mots_metrics import evaluate_id_maps, report_json
from .synthetic_scenes import (OracleEmbeddingSpec, SceneSpec, oracle_embeddings,
                               render_sequence, separated_means, write_sequence)


class InputError(Exception):
    pass


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _embedding_spec(section, ids, rho_r):
    section = dict(section)
    dim = section.pop("dim", EMBEDDING_DIM)
    if "means" not in section:
        section["means"] = separated_means(ids, dim, rho_r)
    return OracleEmbeddingSpec(**section)


def cmd_gen(args):
    cfg = load_config(args.config)
    with open(args.spec) as f:
        doc = json.load(f)
    scene = dict(doc.get("scene", doc))
    if args.seed is not None:
        scene["seed"] = args.seed
    spec = SceneSpec.from_dict(scene)
    seq = render_sequence(spec)
    emb = ospec = None
    if "embedding" in doc:
        ospec = _embedding_spec(doc["embedding"], [o.id for o in spec.objects], cfg.loss.rho_r)
        emb = oracle_embeddings(seq.labels, ospec)
    write_sequence(args.out, spec, seq, emb, ospec)
    print(json.dumps({"frames": spec.frames, "objects": len(spec.objects), "out": args.out}))
    return 0


def cmd_track(args):
    cfg = load_config(args.config)
    seed = cfg.tracker.seed if args.seed is None else args.seed
    emb_files = io.sorted_frames(args.embeddings, ".ste")
    mask_files = io.sorted_frames(args.masks, ".pgm")
    if len(emb_files) != len(mask_files):
        raise InputError(f"{len(emb_files)} embedding frames but {len(mask_files)} masks")
    os.makedirs(args.out, exist_ok=True)
    store = TrackStore(life_span=cfg.tracker.life_span, seed=seed)
    for t, (ef, mf) in enumerate(zip(emb_files, mask_files)):
        emb = io.read_tensor(ef)
        fg = io.read_pgm(mf) > 0
        if emb.ndim != 3 or emb.shape[1:] != fg.shape:
            raise InputError(f"frame {t}: embedding {emb.shape} and mask {fg.shape} disagree")
        labels = segment_frame(emb, ~fg, store, t, cfg.loss)
        io.write_id_map(os.path.join(args.out, os.path.basename(mf)), labels)
    print(json.dumps({"frames": len(emb_files), "tracks": store.next_id - 1, "out": args.out}))
    return 0


def cmd_eval(args):
    gt_files = io.sorted_frames(args.gt, ".pgm")
    pred_files = io.sorted_frames(args.pred, ".pgm")
    if len(gt_files) != len(pred_files):
        raise InputError(f"{len(gt_files)} ground-truth frames but {len(pred_files)} predicted")
    gt = [io.read_id_map(f) for f in gt_files]
    pred = [io.read_id_map(f) for f in pred_files]
    for t, (g, p) in enumerate(zip(gt, pred)):
        if g.shape != p.shape:
            raise InputError(f"frame {t}: size mismatch {g.shape} vs {p.shape}")
    print(report_json(evaluate_id_maps(pred, gt, args.iou_threshold)))
    return 0


def cmd_check_grads(args):
    if args.trials == 0:
        print(json.dumps({"trials": 0, "note": "no trials"}))
        return 0
    seed = 0 if args.seed is None else args.seed
    worst = gradcheck.run_checks(seed, args.trials, flip_sign=args.inject_sign_flip)
    ok = gradcheck.passed(worst)
    print(json.dumps({"trials": args.trials, "max_rel_error": worst, "passed": ok}, sort_keys=True))
    return 0 if ok else 1


def cmd_bench_stream(args):
    cfg = load_config(args.config).causal
    overrides = {k: v for k, v in (("channels", args.channels), ("num_blocks", args.blocks))
                 if v is not None}
    cfg = replace(cfg, **overrides)
    seed = 0 if args.seed is None else args.seed
    weights = cs.init_weights(cfg, seed, dtype=np.float32)
    result = cs.benchmark_stream(cfg, weights, args.frames, args.height, args.width, seed=seed)
    print(f"{'frame':>6} {'cached ms':>10} {'recompute ms':>13}", file=sys.stderr)
    for row in result["rows"]:
        print(f"{row['frame']:>6} {1e3 * row['cached_s']:>10.2f} {1e3 * row['recompute_s']:>13.2f}",
              file=sys.stderr)
    print(f"stream/batch max abs diff: {result['max_abs_diff']:.3g}", file=sys.stderr)
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="stembed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("gen", help="render a synthetic scene to disk")
    p.add_argument("spec")
    p.add_argument("out")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("track", help="segment and track embedding frames")
    p.add_argument("embeddings")
    p.add_argument("masks")
    p.add_argument("out")
    common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="MOTS metrics of predicted against ground-truth id maps")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-grads", help="finite-difference check of all analytic gradients")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    common(p)
    p.set_defaults(func=cmd_check_grads)

    p = sub.add_parser("bench-stream", help="cached streaming vs. full recompute latency")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--height", type=int, default=24)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    common(p)
    p.set_defaults(func=cmd_bench_stream)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        _err(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
