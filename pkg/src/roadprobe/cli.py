"""Command-line interface.

Subcommands: generate (render only), analyze (passive campaign),
falsify (GP-LCB active campaign), verify (store self-consistency),
report (CSV / overlay / grid), discrepancy (exact star discrepancy of
a CSV point set).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import apply_overrides, load_campaign
from .errors import RoadprobeError
from .falsifier import falsify_loop
from .harness import ResultStore, resume_campaign, run_campaign, verify_store
from .modspace import validate_point
from .render import save_png, generate_image
from .report import export_csv, export_heatmap_grid, render_overlay
from .samplers import PointSet, build_sampler, star_discrepancy


def _add_common(sub, config_required=True):
    sub.add_argument("--config", required=config_required, help="campaign config TOML")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--trials", type=int, default=None, help="override halt max_trials")
    sub.add_argument("--seed", type=int, default=None, help="override sampler seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadprobe",
                                     description="blind-spot testing of car detectors "
                                                 "on synthetic road scenes")
    parser.add_argument("--version", action="version", version=f"roadprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render images only, no detector")
    _add_common(p)

    p = sub.add_parser("analyze", help="passive campaign with the configured sampler")
    _add_common(p, config_required=False)  # resume reads the store's embedded config
    p.add_argument("--workers", type=int, default=1, help="parallel render/detect workers")
    p.add_argument("--resume", action="store_true", help="continue an interrupted campaign")

    p = sub.add_parser("falsify", help="active GP-LCB counterexample search")
    _add_common(p)

    p = sub.add_parser("verify", help="recompute every stored record")
    p.add_argument("--store", required=True, help="campaign store directory")
    p.add_argument("--skip-images", action="store_true", help="skip PNG byte comparison")

    p = sub.add_parser("report", help="export CSV / overlay / heatmap grid")
    p.add_argument("--store", required=True, help="campaign store directory")
    p.add_argument("--csv", default=None, help="per-trial CSV output path")
    p.add_argument("--overlay", default=None, help="overlay PNG output path")
    p.add_argument("--grid", nargs=3, metavar=("GX", "GY", "PATH"), default=None,
                   help="heatmap grid: cells in x, cells in y, CSV path")

    p = sub.add_parser("discrepancy", help="exact star discrepancy of a CSV point set")
    p.add_argument("csv", help="CSV with one point per row")

    return parser


def _load_points_csv(path: Path) -> PointSet:
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            if not rows:  # tolerate a header line
                continue
            raise
    return PointSet.from_points(rows)


def _cmd_generate(args) -> int:
    cfg = apply_overrides(load_campaign(args.config), trials=args.trials, seed=args.seed)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    sampler = build_sampler(cfg.sampler_spec, cfg.space.n)
    count = cfg.halt.max_trials
    if count is None:
        raise RoadprobeError("generate needs a trial count ([halt] max_trials or --trials)")
    if sampler.size is not None:
        count = min(count, sampler.size)
    with open(out / "samples.ndjson", "w", encoding="utf-8") as fh:
        for i in range(count):
            point = validate_point(cfg.space, sampler.point_at(i).coords)
            sample = generate_image(cfg.scene, cfg.space, point, sample_index=i)
            rel = f"images/sample_{i:06d}.png"
            save_png(sample.image, out / rel)
            fh.write(json.dumps({"index": i, "point": list(point.coords),
                                 "image_path": rel, "gt_box": sample.gt_box.to_dict()},
                                separators=(",", ":")) + "\n")
    print(f"generated {count} images under {out}")
    return 0


def _cmd_analyze(args) -> int:
    if args.resume:
        store = resume_campaign(args.out, workers=args.workers)
    else:
        if args.config is None:
            raise RoadprobeError("analyze needs --config (or --resume with an existing store)")
        cfg = apply_overrides(load_campaign(args.config), trials=args.trials, seed=args.seed)
        store = run_campaign(cfg.scene, cfg.space, cfg.sampler_spec, cfg.endpoint, cfg.halt,
                             args.out, score=cfg.score, raw_config=cfg.raw,
                             workers=args.workers)
    print(f"campaign halted: {store.halt_reason} after {len(store.records)} trials")
    return 0


def _cmd_falsify(args) -> int:
    cfg = apply_overrides(load_campaign(args.config), trials=args.trials, seed=args.seed)
    store = falsify_loop(cfg.scene, cfg.space, cfg.endpoint, cfg.gp, cfg.halt, args.out,
                         score=cfg.score, raw_config=cfg.raw)
    theta = cfg.halt.theta
    for record in store.records:
        if theta is not None and record.score is not None and record.score < theta:
            print(json.dumps({"event": "counterexample", "trial": record.index,
                              "point": list(record.point), "score": record.score,
                              "image_path": str(store.image_abspath(record.image_path))},
                             separators=(",", ":")))
    print(json.dumps({"event": "done", "halt_reason": store.halt_reason,
                      "trials": len(store.records)}, separators=(",", ":")))
    return 0


def _cmd_verify(args) -> int:
    result = verify_store(args.store, check_images=not args.skip_images)
    for line in result.mismatches:
        print(f"MISMATCH {line}")
    print(f"verified {result.trials} trials ({result.errored} errored): "
          f"{'OK' if result.ok else f'{len(result.mismatches)} mismatches'}")
    return 0 if result.ok else 1


def _cmd_report(args) -> int:
    from .config import campaign_from_dict

    store = ResultStore.open(args.store)
    if store.metadata.get("config") is None:
        raise RoadprobeError("store has no embedded config; cannot rebuild the scene")
    scene = campaign_from_dict(store.metadata["config"]).scene
    wrote = []
    if args.csv:
        rows = export_csv(store, args.csv)
        wrote.append(f"{args.csv} ({rows} rows)")
    if args.overlay:
        render_overlay(store, scene, args.overlay)
        wrote.append(args.overlay)
    if args.grid:
        gx, gy, path = int(args.grid[0]), int(args.grid[1]), args.grid[2]
        export_heatmap_grid(store, scene, gx, gy, path)
        wrote.append(path)
    if not wrote:
        raise RoadprobeError("report needs at least one of --csv, --overlay, --grid")
    print("wrote " + ", ".join(wrote))
    return 0


def _cmd_discrepancy(args) -> int:
    points = _load_points_csv(Path(args.csv))
    print(f"{star_discrepancy(points):.12f}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "analyze": _cmd_analyze,
    "falsify": _cmd_falsify,
    "verify": _cmd_verify,
    "report": _cmd_report,
    "discrepancy": _cmd_discrepancy,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except RoadprobeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
