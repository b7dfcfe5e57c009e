"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SymgroundError
from .features import FeatureDataset, FeatureRecord, featurize_manifest
from .glide_lite import (assignment_accuracy, extract_labeled_patches, infer_locations,
                         infer_segmentation, inject_label_noise)
from .io import (dump_json, load_json, read_jsonl, read_trace_csv, write_jsonl, write_ppm,
                 write_trace_csv)
from .learner import KnowledgeBase, classify, group_key, learn
from .pipeline import (PipelineConfig, build_test_set, classify_cases, evaluate,
                       group_confusions, report_json, run_pipeline)
from .plan_parser import Plan, load_lexicon, parse_plan
from .scene_sim import DemoScript, Scene, generate_scene, make_script, render_frame, simulate_demo

log = logging.getLogger("symground")


def _config(args) -> PipelineConfig:
    d = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    return PipelineConfig.from_dict(d)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_parse(args, cfg):
    lexicon = load_lexicon(args.lexicon)
    if args.text:
        sentences = args.text
    else:
        src = Path(args.input).read_text(encoding="utf-8") if args.input else sys.stdin.read()
        sentences = [line.strip() for line in src.splitlines() if line.strip()]
    plan = parse_plan(sentences, lexicon)
    path = Path(args.out) if args.out else _out(args) / "plan.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(plan.to_dict(), path)
    print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))


def cmd_gen_demo(args, cfg):
    lexicon = load_lexicon(args.lexicon)
    rng = np.random.default_rng(cfg.seed)
    scene = generate_scene(args.n_objects or cfg.n_objects, rng, params=cfg.scene_params(),
                           distinct=cfg.distinct_classes)
    script = make_script(scene, args.n_steps or cfg.steps_per_demo, rng, lexicon)
    trace = simulate_demo(scene, script, cfg.demo_params(), rng)
    out = _out(args)
    dump_json(scene.to_dict(), out / "scene.json")
    dump_json(script.to_dict(), out / "script.json")
    (out / "narration.txt").write_text("\n".join(script.sentences) + "\n", encoding="utf-8")
    write_trace_csv(trace, out / "trace.csv")
    write_ppm(out / "frame.ppm", render_frame(scene, rng, cfg.pixel_noise))
    print(f"wrote scene, script, narration, trace and frame to {out}")


def cmd_segment(args, cfg):
    lexicon = load_lexicon(args.lexicon)
    scene = Scene.from_dict(load_json(args.scene))
    if args.narration:
        lines = Path(args.narration).read_text(encoding="utf-8").splitlines()
        plan = parse_plan([s for s in lines if s.strip()], lexicon)
    elif args.plan:
        plan = Plan.from_dict(load_json(args.plan))
    else:
        plan = DemoScript.from_dict(load_json(args.script)).plan
    trace = read_trace_csv(args.trace, scene.camera.image_size)
    partition = infer_segmentation(trace, len(plan.steps), cfg.segment_params())
    locations = infer_locations(trace, partition)
    result = {"changepoints": list(partition.changepoints),
              "locations_px": locations.tolist(), "n_actions": partition.n_actions}
    if trace.truth_assignment is not None and np.any(trace.truth_assignment >= 0):
        result["assignment_accuracy"] = assignment_accuracy(partition, trace)
    out = _out(args)
    seg_path = Path(args.out) if args.out else out / "segmentation.json"
    seg_path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(result, seg_path)
    print(json.dumps(result, sort_keys=True))
    if args.patches:
        rng = np.random.default_rng(cfg.seed)
        clean = render_frame(scene, None, 0.0)
        patches = []
        for f in range(args.frames):
            patches += extract_labeled_patches(clean, scene, plan, locations, cfg.patch_size,
                                               0, f, cfg.theta_bg, cfg.theta_noise, rng,
                                               cfg.pixel_noise)
        if args.noise_rate:
            classes = sorted({o.symbols for o in scene.objects})
            patches = inject_label_noise(patches, args.noise_rate, rng, classes)
        pdir = out / "patches"
        pdir.mkdir(exist_ok=True)
        records = []
        for p in patches:
            name = f"patches/{p.id}.ppm"
            write_ppm(out / name, p.raster)
            records.append(p.manifest_record(name))
        write_jsonl(records, out / "manifest.jsonl")
        print(f"wrote {len(records)} patches and manifest.jsonl to {out}")


def cmd_featurize(args, cfg):
    manifest = read_jsonl(args.manifest)
    base = args.base_dir or str(Path(args.manifest).parent)
    records, skipped = featurize_manifest(manifest, base, cfg.theta_bg, cfg.theta_noise)
    path = Path(args.out) if args.out else _out(args) / "features.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl([r.to_dict() for r in records], path)
    print(f"featurized {len(records)} patches, skipped {skipped} background-dominated")


def _read_features(path) -> list[FeatureRecord]:
    return [FeatureRecord.from_dict(d) for d in read_jsonl(path)]


def cmd_train(args, cfg):
    records = _read_features(args.features)
    kb = learn(FeatureDataset.from_records(records), cfg.learner_config())
    path = Path(args.out) if args.out else _out(args) / "model.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(kb.to_dict(), path)
    for feats, members in kb.groups:
        print(f"{group_key(feats)}: {', '.join(members)}")


def cmd_classify(args, cfg):
    kb = KnowledgeBase.from_dict(load_json(args.model))
    rows = []
    for rec in _read_features(args.features):
        pred = classify(rec.features, kb)
        rows.append({"id": rec.id, "predictions": {group_key(f): s for f, s in pred.items()}})
    path = Path(args.out) if args.out else _out(args) / "predictions.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(rows, path)
    print(f"classified {len(rows)} feature vectors")


def cmd_eval(args, cfg):
    kb = KnowledgeBase.from_dict(load_json(args.model))
    seed = np.random.SeedSequence(cfg.seed).spawn(2)[1]
    cases = build_test_set(cfg.test_counts, seed, cfg.patch_size, cfg.colour_jitter,
                           cfg.pixel_noise)
    predictions = classify_cases(cases, kb, cfg.theta_bg, cfg.theta_noise)
    results = evaluate(cases, predictions, kb)
    out = _out(args)
    (out / "eval.json").write_text(report_json(results), encoding="utf-8")
    for feats, cm in group_confusions(cases, predictions, kb).items():
        cm.write_csv(out / f"confusion_{'-'.join(feats)}.csv")
    _summary(results)


def _summary(results):
    print(f"colour accuracy {results['colour_accuracy']:.3f}  "
          f"shape accuracy {results['shape_accuracy']:.3f}  "
          f"far-unseen colour Unknown rate {results['far_unseen_colour_unknown_rate']}")


def cmd_pipeline(args, cfg):
    report = run_pipeline(cfg, args.out_dir, load_lexicon(args.lexicon))
    _summary(report["test"])
    if args.out_dir:
        print(f"report written to {Path(args.out_dir) / 'report.json'}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symground",
                                 description="Learn colour and shape symbols from narrated, "
                                             "eye-tracked demonstrations.")
    ap.add_argument("--config", help="JSON file with pipeline config overrides")
    ap.add_argument("--seed", type=int, help="root seed (overrides the config)")
    ap.add_argument("--out-dir", default="out", help="directory for outputs (default: out)")
    ap.add_argument("--lexicon", action="append", default=[],
                    help="extra lexicon TSV layered over the shipped one (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse instructions into an abstract plan")
    p.add_argument("text", nargs="*", help="sentences (one per argument)")
    p.add_argument("--in", "--input", dest="input",
                   help="file with one sentence per line (default: stdin)")
    p.add_argument("--out", help="plan JSON path (default: <out-dir>/plan.json)")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("gen-demo", help="simulate a scene, narration and fixation trace")
    p.add_argument("--n-steps", type=int, help="plan length (default: config steps_per_demo)")
    p.add_argument("--n-objects", type=int, help="objects on the table (default: config)")
    p.set_defaults(func=cmd_gen_demo)

    p = sub.add_parser("segment", help="assign fixations to plan steps, optionally cut patches")
    p.add_argument("--scene", required=True)
    p.add_argument("--trace", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--script", help="script.json from gen-demo")
    g.add_argument("--plan", help="plan JSON from the parse subcommand")
    g.add_argument("--narration", help="text file with one instruction per line")
    p.add_argument("--patches", action="store_true", help="also write labelled patches")
    p.add_argument("--frames", type=int, default=1, help="noisy observations per step")
    p.add_argument("--noise-rate", type=float, default=0.0, help="label corruption rate")
    p.add_argument("--out", help="segmentation JSON path (default: <out-dir>/segmentation.json)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("featurize", help="patch manifest -> feature vectors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--base-dir", help="directory patch paths are relative to")
    p.add_argument("--out", help="features path (default: <out-dir>/features.jsonl)")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="learn symbol models from feature vectors")
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="model path (default: <out-dir>/model.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="label feature vectors with a learned model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="predictions path (default: <out-dir>/predictions.jsonl)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="score a model on the seen/near/far test set")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (SymgroundError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
