"""
Command-line interface for attenuation profiling and perceptual variant scheduling

Usage:
    python cli.py estimate-attenuation --corpus DIR --op blur:1.5 --out curve.json
    python cli.py fit-curve --curve curve.json --out refit.json
    python cli.py make-profiles --curves c0.json c1.json --costs costs.json --bands 0.0156,0.0313,0.0625 --out profiles.json
    python cli.py schedule --image frame.png --config run.json --gaze 960,540 --out-prefix out/frame
    python cli.py schedule-video --frames "clip/*.png" --config run.json --out-prefix out/clip
"""

import argparse
import dataclasses
import sys
import traceback
import warnings
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from config import AppConfig, ViewingDefaults
from modules.errors import ConfigurationError, HvpfError, InputError
from modules.motion import FlowField, block_match, load_flow
from modules.scheduler import (
    ProfileSet,
    QualityMap,
    VariantProfile,
    cost_report,
    heatmap_levels,
    schedule_image,
    schedule_sequence,
)
from modules.spectral import SurrogateOperator, attenuation_curve, fit_gaussian_falloff
from modules.viewing import LuminanceImage, ViewingConditions, decode_luminance
from modules.visualization import (
    create_attenuation_chart,
    create_frame_ratio_chart,
    create_quality_map_chart,
    save_figure,
)
from utils.data_loader import (
    DataManager,
    ReportDocument,
    RunSetup,
    VideoReportDocument,
    load_default_viewing,
)
from utils.image_io import expand_glob, list_images, read_raster, write_gray


class Console:
    """Stage banners and status lines; silent with --quiet except warnings"""

    def __init__(self, quiet: bool = False):
        self.quiet = quiet

    def banner(self, title: str):
        if not self.quiet:
            print("\n" + "=" * 60)
            print(title)
            print("=" * 60)

    def ok(self, message: str):
        if not self.quiet:
            print(f"✓ {message}")

    def warn(self, message: str):
        print(f"⚠ {message}", file=sys.stderr)


def load_luminance(path: str, vc: ViewingConditions) -> LuminanceImage:
    return decode_luminance(read_raster(path), vc)


def parse_floats(text: str, count: int, label: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(',')]
    except ValueError as e:
        raise InputError(f"{label}: expected {count} comma-separated numbers, got '{text}'") from e
    if len(values) != count:
        raise InputError(f"{label}: expected {count} comma-separated numbers, got '{text}'")
    return values


def ensure_video_fps(vc: ViewingConditions, console: Console) -> ViewingConditions:
    if vc.fps > 0:
        return vc
    console.warn(f"Viewing fps is 0; assuming {ViewingDefaults.VIDEO_FPS:g} fps for motion")
    return dataclasses.replace(vc, fps=ViewingDefaults.VIDEO_FPS)


def write_schedule_outputs(prefix: str, qmap: QualityMap, profiles: ProfileSet) -> dict:
    """Write P.map.csv, P.report.json and P.heatmap.png; return the validated report"""
    report = cost_report(qmap, profiles)
    ReportDocument.model_validate(report)

    DataManager.write_map_csv(f"{prefix}.map.csv", qmap)
    DataManager.save_json(f"{prefix}.report.json", report)
    write_gray(f"{prefix}.heatmap.png", heatmap_levels(qmap, profiles))
    return report


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_estimate_attenuation(args, console: Console) -> int:
    console.banner("STAGE 1: Loading images")
    vc = DataManager.load_viewing(args.viewing) if args.viewing else load_default_viewing()

    if args.corpus:
        if not args.op:
            raise InputError("--corpus needs --op")
        operator = SurrogateOperator.parse(args.op)
        paths = list_images(args.corpus)
        corpus = [load_luminance(p, vc) for p in paths]
        console.ok(f"Loaded {len(corpus)} corpus images from {args.corpus}")
        source = operator
    else:
        pairs = DataManager.read_pairs(args.pairs)
        source = [(load_luminance(ref, vc), load_luminance(rec, vc)) for ref, rec in pairs]
        corpus = None
        console.ok(f"Loaded {len(source)} image pairs from {args.pairs}")

    console.banner("STAGE 2: Measuring attenuation")
    curve = attenuation_curve(
        source,
        corpus=corpus,
        k=args.k,
        percentile=args.percentile,
        threads=args.threads,
        progress=not console.quiet,
    )
    console.ok(f"{int(curve.valid.sum())} of {curve.valid.size} frequency bins valid ({curve.aggregate})")
    console.ok(f"Fit: a={curve.fit.a:.5f} b={curve.fit.b:.5f} c={curve.fit.c:.4f} rms={curve.fit.rms:.5f}")

    console.banner("STAGE 3: Saving results")
    DataManager.save_curve(args.out, curve)
    console.ok(f"Curve saved to {args.out}")
    if args.plot:
        save_figure(create_attenuation_chart(curve), args.plot)
        console.ok(f"Chart saved to {args.plot}")
    return AppConfig.EXIT_OK


def cmd_fit_curve(args, console: Console) -> int:
    curve = DataManager.load_curve(args.curve)
    curve.fit = fit_gaussian_falloff(curve.bin_freqs, curve.samples, curve.valid)
    console.ok(f"Fit: a={curve.fit.a:.5f} b={curve.fit.b:.5f} c={curve.fit.c:.4f} rms={curve.fit.rms:.5f}")

    DataManager.save_curve(args.out, curve)
    console.ok(f"Curve saved to {args.out}")
    if args.plot:
        save_figure(create_attenuation_chart(curve), args.plot)
        console.ok(f"Chart saved to {args.plot}")
    return AppConfig.EXIT_OK


def cmd_make_profiles(args, console: Console) -> int:
    bands = parse_floats(args.bands, 3, "--bands")
    if any(f <= 0 for f in bands) or sorted(bands) != bands:
        raise InputError(f"--bands must be ascending positive frequencies, got {bands}")

    costs = DataManager.load_costs(args.costs)
    if len(costs) != len(args.curves):
        raise InputError(f"{len(args.curves)} curves but {len(costs)} cost entries")
    ids = [c.id for c in costs]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"Duplicate variant ids in {args.costs}: {ids}")

    variants = []
    for path, cost in zip(args.curves, costs):
        curve = DataManager.load_curve(path)
        fit = curve.fit or fit_gaussian_falloff(curve.bin_freqs, curve.samples, curve.valid)
        variants.append(VariantProfile(
            id=cost.id,
            name=cost.name,
            cost_flops=cost.cost_flops,
            t_hat=fit.evaluate(np.asarray(bands)),
            atten=fit,
            baseline_full=cost.baseline_full,
        ))
        console.ok(f"{cost.name}: t_hat = {np.round(variants[-1].t_hat, 4).tolist()}")

    profiles = ProfileSet(variants)
    DataManager.save_json(args.out, profiles.to_list())
    console.ok(f"{len(profiles)} profiles saved to {args.out}")
    return AppConfig.EXIT_OK


def _scheduling_kwargs(setup: RunSetup, args) -> dict:
    gaze = tuple(parse_floats(args.gaze, 2, "--gaze")) if args.gaze else None
    return {
        'gaze': gaze,
        'levels': setup.levels,
        'scale': setup.scale,
        'alpha': setup.alpha,
        'beta': setup.beta,
        'threads': args.threads if args.threads is not None else setup.threads,
    }


def cmd_schedule(args, console: Console) -> int:
    console.banner("STAGE 1: Loading configuration")
    setup = DataManager.load_run_config(args.config)
    image = load_luminance(args.image, setup.vc)
    console.ok(f"Image {image.width_px}x{image.height_px}, patch {setup.patch_size}px, "
               f"{len(setup.profiles)} variants, ppd {setup.vc.pixels_per_degree:.2f}")

    flow: Optional[FlowField] = None
    vc = setup.vc
    if args.flow:
        if args.prev:
            console.warn("--flow given; ignoring --prev")
        flow = load_flow(args.flow, expected_shape=image.shape)
    elif args.prev:
        prev = load_luminance(args.prev, setup.vc)
        flow = block_match(prev, image)
    if flow is not None:
        vc = ensure_video_fps(vc, console)

    console.banner("STAGE 2: Scheduling patches")
    qmap = schedule_image(image, vc, setup.csf, setup.profiles, setup.patch_size, flow=flow,
                          progress=not console.quiet, **_scheduling_kwargs(setup, args))

    console.banner("STAGE 3: Saving results")
    report = write_schedule_outputs(args.out_prefix, qmap, setup.profiles)
    console.ok(f"{report['n_patches']} patches, cost ratio {report['ratio']:.4f}")
    console.ok(f"Outputs written to {args.out_prefix}.map.csv / .report.json / .heatmap.png")
    if args.plot:
        save_figure(create_quality_map_chart(qmap, setup.profiles), args.plot)
        console.ok(f"Chart saved to {args.plot}")
    return AppConfig.EXIT_OK


def cmd_schedule_video(args, console: Console) -> int:
    console.banner("STAGE 1: Loading clip")
    setup = DataManager.load_run_config(args.config)
    paths = expand_glob(args.frames)
    if len(paths) < 2:
        raise InputError(f"Need at least 2 frames matching '{args.frames}', found {len(paths)}")
    frames = [load_luminance(p, setup.vc) for p in paths]
    console.ok(f"Loaded {len(frames)} frames")

    flows = None
    if args.flows:
        flow_paths = expand_glob(args.flows)
        flows = [load_flow(p, expected_shape=frames[0].shape) for p in flow_paths]
        console.ok(f"Loaded {len(flows)} flow fields")

    vc = ensure_video_fps(setup.vc, console)

    console.banner("STAGE 2: Scheduling frames")
    qmaps = schedule_sequence(
        frames, vc, setup.csf, setup.profiles, setup.patch_size,
        flows=flows,
        block=args.block,
        search_radius=args.radius,
        progress=not console.quiet,
        **_scheduling_kwargs(setup, args),
    )

    console.banner("STAGE 3: Saving results")
    summaries = []
    for i, qmap in enumerate(qmaps):
        report = write_schedule_outputs(f"{args.out_prefix}.frame{i:04d}", qmap, setup.profiles)
        summaries.append({
            'frame': i,
            'cost_total': report['cost_total'],
            'cost_baseline': report['cost_baseline'],
            'ratio': report['ratio'],
        })

    cost_total = float(sum(s['cost_total'] for s in summaries))
    cost_baseline = float(sum(s['cost_baseline'] for s in summaries))
    aggregate = {
        'n_frames': len(qmaps),
        'fps': vc.fps,
        'frames': summaries,
        'cost_total': cost_total,
        'cost_baseline': cost_baseline,
        'ratio': cost_total / cost_baseline,
    }
    VideoReportDocument.model_validate(aggregate)
    DataManager.save_json(f"{args.out_prefix}.report.json", aggregate)
    console.ok(f"{len(qmaps)} frames, total cost ratio {aggregate['ratio']:.4f}")
    if args.plot:
        save_figure(create_frame_ratio_chart(summaries), args.plot)
        console.ok(f"Chart saved to {args.plot}")
    return AppConfig.EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Perceptual super-resolution variant scheduler")
    parser.add_argument("--quiet", action="store_true", help="Suppress progress output")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (0 = auto, default HVPF_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-attenuation", help="Measure an upsampler's attenuation curve")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--corpus", help="Directory of reference PNG/PGM images")
    source.add_argument("--pairs", help="List file with one 'reference reconstruction' pair per line")
    p.add_argument("--op", help="Surrogate operator: identity | blur:SIGMA | bicubic:K | box:K")
    p.add_argument("--k", type=int, default=None, help="Scale factor recorded with the curve")
    p.add_argument("--percentile", type=float, default=None, help="Aggregate with a per-bin percentile")
    p.add_argument("--viewing", help="Viewing JSON used to decode images (default: bundled)")
    p.add_argument("--out", required=True, help="Output curve JSON")
    p.add_argument("--plot", help="Optional HTML chart")
    p.set_defaults(func=cmd_estimate_attenuation)

    p = sub.add_parser("fit-curve", help="Re-fit the falloff of an existing curve")
    p.add_argument("--curve", required=True, help="Curve JSON")
    p.add_argument("--out", required=True, help="Output curve JSON")
    p.add_argument("--plot", help="Optional HTML chart")
    p.set_defaults(func=cmd_fit_curve)

    p = sub.add_parser("make-profiles", help="Build variant profiles from curves and costs")
    p.add_argument("--curves", nargs="+", required=True, help="Curve JSON files")
    p.add_argument("--costs", required=True, help="JSON list of {id, name, cost_flops[, baseline_full]}")
    p.add_argument("--bands", required=True, help="Three ascending band frequencies (cycles/pixel)")
    p.add_argument("--out", required=True, help="Output profile JSON")
    p.set_defaults(func=cmd_make_profiles)

    p = sub.add_parser("schedule", help="Schedule one image")
    p.add_argument("--image", required=True, help="PNG/PGM image")
    p.add_argument("--config", required=True, help="Run configuration JSON")
    p.add_argument("--gaze", help="Gaze position X,Y in pixels")
    p.add_argument("--flow", help="Flow file (.flo or CSV) for the image")
    p.add_argument("--prev", help="Previous frame; motion estimated by block matching")
    p.add_argument("--out-prefix", required=True, help="Output prefix P (P.map.csv, P.report.json, P.heatmap.png)")
    p.add_argument("--plot", help="Optional HTML chart")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("schedule-video", help="Schedule every frame of a clip")
    p.add_argument("--frames", required=True, help="Glob of frame images (sorted by name)")
    p.add_argument("--config", required=True, help="Run configuration JSON")
    p.add_argument("--flows", help="Glob of flow files (one per frame or per frame pair)")
    p.add_argument("--gaze", help="Gaze position X,Y in pixels")
    p.add_argument("--block", type=int, default=None, help="Block matching block size")
    p.add_argument("--radius", type=int, default=None, help="Block matching search radius")
    p.add_argument("--out-prefix", required=True, help="Output prefix P")
    p.add_argument("--plot", help="Optional HTML chart")
    p.set_defaults(func=cmd_schedule_video)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    console = Console(quiet=args.quiet)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.func(args, console)
        for w in caught:
            console.warn(str(w.message))
        return code
    except (HvpfError, FileNotFoundError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return AppConfig.EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return AppConfig.EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
