"""Command-line entry point: ``tatttrn <command> ...``.

Commands: gen-data, train, enroll, search, eval, plot. Settings come from
built-in defaults, then an optional INI ``--config`` file, then flags. The
merged settings are written as ``run_config.ini`` into every output
directory, and passing that file back via ``--config`` reruns the command.

Environment: ``TATTTRN_OUTPUT_ROOT`` (where timestamped run directories go when
``--out`` is omitted) and ``TATTTRN_WORKERS`` (sample-generation workers).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__, evalkit, retrieval, synthgen
from .errors import InvalidStateError

log = logging.getLogger("tatttrn")

SYNTH_DEFAULTS = {
    "templates": 20, "per_template": 50, "seed": 0, "side": 224, "template_side": 224,
    "base_size": 320, "n_bases": 25, "margin": 0.1, "scale_min": 0.5, "scale_max": 1.0,
    "color_min": 0.6, "color_max": 1.0, "blur_min": 0.0, "blur_max": 2.0,
    "opacity_min": 0.35, "opacity_max": 0.95,
}
SPLIT_DEFAULTS = {"mode": "closed", "splits": 5, "seed": 0, "open_fraction": 0.3, "rank": 1,
                  "branch": "both", "r_max": 0}


# ---------------------------------------------------------------------------
# config plumbing


def _read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None and not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    return parser


def _merge(defaults: dict, parser: configparser.ConfigParser, section: str, flags: dict) -> dict:
    out = dict(defaults)
    if parser.has_section(section):
        for k, v in parser[section].items():
            key = k.replace("-", "_")
            if key in defaults:
                out[key] = type(defaults[key])(v) if not isinstance(defaults[key], bool) else v == "True"
    for k, v in flags.items():
        if k in defaults and v is not None:
            out[k] = v
    return out


def _run_dir(out: str | None, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get("TATTTRN_OUTPUT_ROOT", "runs"))
        path = root / f"{command}-{datetime.now().strftime('%Y%m%d-%H%M%S-%f')}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_config(run_dir: Path, command: str, sections: dict[str, dict]) -> Path:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {"command": command, "version": __version__}
    for name, values in sections.items():
        parser[name] = {k: str(v) for k, v in values.items()}
    path = run_dir / "run_config.ini"
    with open(path, "w") as f:
        parser.write(f)
    return path


def _workers(flag) -> int:
    if flag is not None:
        return flag
    return int(os.environ.get("TATTTRN_WORKERS", "1"))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> Path:
    parser = _read_ini(args.config)
    flags = {"templates": args.templates, "per_template": args.per_template, "seed": args.seed,
             "side": args.side, "template_side": args.template_side, "base_size": args.base_size,
             "n_bases": args.n_bases, "margin": args.margin}
    s = _merge(SYNTH_DEFAULTS, parser, "synthgen", flags)
    run_dir = _run_dir(args.out, "gen-data")

    if args.template_dir:
        templates = synthgen.load_template_folder(args.template_dir, s["template_side"])
        if args.templates:
            templates = templates[: args.templates]
    else:
        templates = synthgen.generate_glyph_templates(s["templates"], s["template_side"], seed=s["seed"])
    if args.skin_dir:
        pools = [synthgen.load_skin_folder(d) for d in args.skin_dir]
    else:
        # two procedural pools stand in for the two skin databases
        half = max(1, s["n_bases"] // 2)
        pools = [synthgen.procedural_skin_bases(half, s["base_size"], s["base_size"], seed=s["seed"] * 2 + 1, prefix="skinA"),
                 synthgen.procedural_skin_bases(half, s["base_size"], s["base_size"], seed=s["seed"] * 2 + 2, prefix="skinB")]
    ranges = synthgen.AugmentationRanges(
        scale=(s["scale_min"], s["scale_max"]), color_shift=(s["color_min"], s["color_max"]),
        blur_sigma=(s["blur_min"], s["blur_max"]), opacity=(s["opacity_min"], s["opacity_max"]))
    manifest = synthgen.build_dataset(templates, pools, s["per_template"], s["seed"], run_dir,
                                      ranges=ranges, out_side=s["side"], margin_frac=s["margin"],
                                      workers=_workers(args.workers))
    sections = {"synthgen": s}
    if args.template_dir or args.skin_dir:
        sections["inputs"] = {"template_dir": args.template_dir or "",
                              "skin_dir": ";".join(args.skin_dir or [])}
    _write_run_config(run_dir, "gen-data", sections)
    path = run_dir / synthgen.DatasetManifest.MANIFEST_NAME
    print(f"wrote {len(manifest)} samples ({manifest.num_categories} categories) -> {path}")
    return path


def _model_config(args, C: int | None = None):
    from .model import ModelConfig

    parser = _read_ini(getattr(args, "config", None))
    values = dict(parser["model"]) if parser.has_section("model") else {}
    for key in ("K", "m", "s", "lam", "input_side", "epochs", "batch_size", "lr", "decay",
                "decay_mode", "cycle_target", "backbone_spec", "unet_width"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if C is not None:
        values["C"] = C
    return ModelConfig.from_dict(values)


def cmd_train(args) -> Path:
    from .model import train

    manifest = synthgen.DatasetManifest.read(args.manifest)
    config = _model_config(args, C=len({e.label for e in manifest.entries}))
    run_dir = _run_dir(args.out, "train")
    _write_run_config(run_dir, "train", {"model": config.to_dict(),
                                         "train": {"manifest": args.manifest, "seed": args.seed}})
    state = train(manifest, config, run_dir, seed=args.seed, resume=args.resume)
    path = run_dir / "checkpoint_last.pt"
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epoch} epochs (total loss {last.get('total', float('nan')):.4f}) -> {path}")
    return path


def _features_from_manifest(manifest_path, checkpoint, branch):
    from .model import extract_manifest_features, load_checkpoint

    state = load_checkpoint(checkpoint)
    manifest = synthgen.DatasetManifest.read(manifest_path)
    return extract_manifest_features(manifest, state, branch=branch)


def cmd_enroll(args) -> Path:
    if args.features:
        feats, _, halves = retrieval.load_features(args.features)
    elif args.manifest and args.checkpoint:
        feats = _features_from_manifest(args.manifest, args.checkpoint, args.branch)
        halves = 2 if args.branch == "both" else 1
    else:
        raise ValueError("enroll needs --features, or --manifest with --checkpoint")
    gallery = retrieval.enroll(feats, halves=halves)
    out = Path(args.out)
    if out.suffix not in (".npz", ".csv"):
        out.mkdir(parents=True, exist_ok=True)
        _write_run_config(out, "enroll", {"enroll": {k: str(v) for k, v in vars(args).items() if k != "func"}})
        out = out / "gallery.npz"
    path = retrieval.save_gallery(out, gallery)
    print(f"enrolled {len(gallery)} features (K={gallery.K}) -> {path}")
    return path


def cmd_search(args) -> Path | None:
    from .model import extract_feature, load_checkpoint

    gallery = retrieval.load_gallery(args.gallery)
    state = load_checkpoint(args.checkpoint)
    side = state.config.input_side
    branch = "both" if gallery.halves == 2 else "raw"
    img = synthgen.resize(synthgen.load_image(args.probe), (side, side))
    feat = extract_feature(img[None], state, branch=branch)[0]
    cands = retrieval.search(feat, gallery, args.top_k, probe_id=Path(args.probe).stem)
    accepted = retrieval.decide(cands, args.tau) if args.tau is not None else None
    print(f"probe {cands.probe_id}")
    for r, c in enumerate(cands, 1):
        flag = "" if accepted is None else ("  accepted" if r <= len(accepted) else "  rejected")
        print(f"{r:4d}  {c.sample_id:<24s} label={c.category_label:<6d} similarity={c.similarity:.2f}{flag}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            f.write("rank,sample_id,label,similarity\n")
            for r, c in enumerate(cands, 1):
                f.write(f"{r},{c.sample_id},{c.category_label},{c.similarity:.6f}\n")
        return out
    return None


def cmd_eval(args) -> Path:
    from .model import extract_manifest_features, load_checkpoint

    parser = _read_ini(args.config)
    flags = {"mode": args.mode, "splits": args.splits, "seed": args.seed,
             "open_fraction": args.open_fraction, "rank": args.rank, "branch": args.branch,
             "r_max": args.r_max}
    s = _merge(SPLIT_DEFAULTS, parser, "splits", flags)
    run_dir = _run_dir(args.out, "eval")
    manifest = synthgen.DatasetManifest.read(args.manifest)
    state = load_checkpoint(args.checkpoint)
    feats = extract_manifest_features(manifest, state, branch=s["branch"])
    halves = 2 if s["branch"] == "both" else 1
    splits = evalkit.make_splits(manifest, s["splits"], s["mode"], s["seed"], s["open_fraction"])
    with open(run_dir / "splits.json", "w") as f:
        json.dump([sp.__dict__ for sp in splits], f, indent=1, sort_keys=True)
    per_split, agg = evalkit.evaluate_splits(feats, splits, halves=halves,
                                             R_max=s["r_max"] or None, rank=s["rank"])
    summary = {"mode": s["mode"], "splits": len(splits), "branch": s["branch"]}
    if s["mode"] == "closed":
        curve = agg or evalkit.CMCCurve(np.arange(1, len(per_split[0]) + 1), per_split[0],
                                        np.zeros(len(per_split[0])))
        evalkit.write_cmc_csv(curve, run_dir / "cmc.csv")
        summary["rank1_mean"] = float(curve.mean_ir[0])
        summary["rank1_std"] = float(curve.std_ir[0])
        print(f"rank-1 IR {curve.mean_ir[0]:.4f} +/- {curve.std_ir[0]:.4f} over {len(splits)} splits")
    else:
        curve = agg or per_split[0]
        evalkit.write_det_csv(curve, run_dir / "det.csv")
        summary["eer_mean"] = curve.eer
        summary["eer_std"] = curve.eer_std or 0.0
        print(f"EER {curve.eer:.4f} over {len(splits)} splits")
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write_run_config(run_dir, "eval", {"splits": s, "eval": {"manifest": args.manifest,
                                                              "checkpoint": args.checkpoint}})
    return run_dir


def cmd_plot(args) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.cmc:
        c = evalkit.read_cmc_csv(args.cmc)
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(c.ranks, c.mean_ir, marker="o", ms=3)
        ax.fill_between(c.ranks, np.clip(c.mean_ir - c.std_ir, 0, 1), np.clip(c.mean_ir + c.std_ir, 0, 1), alpha=0.25)
        ax.set(xlabel="Rank", ylabel="Identification rate", ylim=(0, 1.02), title="CMC")
        ax.grid(alpha=0.3)
        path = out / "cmc.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    if args.det:
        d = evalkit.read_det_csv(args.det)
        floor = 1e-4
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.loglog(np.clip(d.fpir, floor, 1), np.clip(d.fnir, floor, 1), drawstyle="steps-post")
        ax.set(xlabel="FPIR", ylabel="FNIR", title=f"DET (EER {d.eer:.3f})")
        ax.grid(alpha=0.3, which="both")
        path = out / "det.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    if not written:
        raise ValueError("plot needs --cmc and/or --det")
    for p in written:
        print(p)
    return written


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tatttrn", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a semi-synthetic dataset")
    g.add_argument("--templates", type=int, help="number of templates (glyphs, or a cap on --template-dir)")
    g.add_argument("--per-template", type=int, dest="per_template")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--template-dir")
    g.add_argument("--skin-dir", action="append", help="skin image folder; repeat for several pools")
    g.add_argument("--side", type=int, help="output sample side")
    g.add_argument("--template-side", type=int, dest="template_side")
    g.add_argument("--base-size", type=int, dest="base_size")
    g.add_argument("--n-bases", type=int, dest="n_bases")
    g.add_argument("--margin", type=float)
    g.add_argument("--workers", type=int)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the network on a generated manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("-K", type=int, dest="K")
    t.add_argument("-m", type=float, dest="m")
    t.add_argument("--input-side", type=int, dest="input_side")
    t.add_argument("--lambda", type=float, dest="lam")
    t.add_argument("--decay", type=float)
    t.add_argument("--decay-mode", choices=("lr", "weight"), dest="decay_mode")
    t.add_argument("--cycle-target", choices=("image", "template"), dest="cycle_target")
    t.add_argument("--backbone", dest="backbone_spec")
    t.add_argument("--unet-width", type=int, dest="unet_width")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enroll", help="build a gallery from features or a manifest")
    e.add_argument("--features")
    e.add_argument("--manifest")
    e.add_argument("--checkpoint")
    e.add_argument("--branch", choices=("both", "raw"), default="both")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enroll)

    s = sub.add_parser("search", help="rank gallery entries for one probe image")
    s.add_argument("--gallery", required=True)
    s.add_argument("--probe", required=True)
    s.add_argument("--top-k", type=int, default=10, dest="top_k")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("eval", help="closed-set CMC or open-set DET over random splits")
    v.add_argument("--manifest", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--mode", choices=("closed", "open"))
    v.add_argument("--splits", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--open-fraction", type=float, dest="open_fraction")
    v.add_argument("--rank", type=int)
    v.add_argument("--r-max", type=int, dest="r_max")
    v.add_argument("--branch", choices=("both", "raw"))
    v.add_argument("--config")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render CMC/DET CSV files to PNG")
    pl.add_argument("--cmc")
    pl.add_argument("--det")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, InvalidStateError, KeyError) as exc:
        print(f"tatttrn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
