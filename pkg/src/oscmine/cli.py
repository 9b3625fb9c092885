"""Command line entry point: ``oscmine {mine,synth,plots,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .synthetic import demo_spec_dict, generate_recording, spec_from_dict, write_synthetic

log = logging.getLogger("oscmine")


def _workers(args) -> int | None:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("OSCMINE_WORKERS")
    return int(env) if env else None


def _load_mapping(path: Path) -> dict:
    text = path.read_text()
    if path.suffix == ".toml":
        return pipeline.tomllib.loads(text)
    return json.loads(text)


def cmd_mine(args) -> int:
    if not args.config:
        log.error("mine needs --config")
        return 2
    try:
        cfg = pipeline.load_config(args.config, seed=args.seed, workers=_workers(args),
                                   output=args.out)
    except (OSError, ValueError, TypeError) as exc:
        log.error("bad config %s: %s", args.config, exc)
        return 2
    try:
        manifest = pipeline.run_pipeline(cfg, resume=args.resume)
    except pipeline.PipelineError as exc:
        log.error("%s", exc)
        return 1
    c = manifest["counts"]
    log.info("|Omega|=%d harvested=%d selected=%d (%.1f%%) runs=%d", c["omega"],
             c["omega_harvested"], c["omega_sel"], 100 * c["selection_fraction"], len(c["runs"]))
    for r in c["runs"]:
        log.info("run %d: eps=%.4g |C|=%d N_hom=%d", r["run_id"], r["epsilon"], r["n_clusters"],
                 r["n_hom"])
    return 0


def cmd_synth(args) -> int:
    try:
        spec_dict = _load_mapping(Path(args.config)) if args.config else demo_spec_dict()
        spec = spec_from_dict(spec_dict, seed=args.seed)
        recording, gt = generate_recording(spec)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.error("invalid synthetic spec: %s", exc)
        return 2
    out = Path(args.out or "synthetic")
    paths = write_synthetic(recording, gt, out)
    for k, p in paths.items():
        log.info("%s: %s", k, p)
    return 0


def cmd_plots(args) -> int:
    out = args.out or (pipeline.load_config(args.config).output if args.config else None)
    if not out:
        log.error("plots needs --out DIR (or --config)")
        return 2
    try:
        written = pipeline.emit_plots(out, run_id=args.run, render=args.render)
    except pipeline.PipelineError as exc:
        log.error("%s", exc)
        return 1
    log.info("wrote %d plot files to %s", len(written), Path(out) / "plots")
    return 0


def cmd_inspect(args) -> int:
    out = args.out or (pipeline.load_config(args.config).output if args.config else None)
    path = Path(out or ".") / pipeline.MANIFEST
    if not path.exists():
        log.error("no manifest at %s", path)
        return 1
    print(path.read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oscmine", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--resume", action="store_true")
        return p

    common(sub.add_parser("mine", help="run the full mining pipeline")).set_defaults(func=cmd_mine)
    common(sub.add_parser("synth", help="write a synthetic recording")).set_defaults(func=cmd_synth)
    p = common(sub.add_parser("plots", help="emit envelope-panel and scatter data"))
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--render", action="store_true", help="also write PNG figures")
    p.set_defaults(func=cmd_plots)
    common(sub.add_parser("inspect", help="print the run manifest")).set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
