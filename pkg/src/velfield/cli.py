"""Command line front end: ``velfield <subcommand> [options]``.

Every tunable lives in one table (:data:`PARAMS`). Values are resolved as
command-line flag > ``--config`` file > built-in default, and each flag's
help text names where its default comes from.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classify, detect, field, raster, register, sim, track

KMH_PER_MS = 3.6


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"invalid config key '{key}': {message}")
        self.key = key


class MissingInput(FileNotFoundError):
    pass


# -- parameters ---------------------------------------------------------------

def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _any(v):
    return True


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(t) for t in str(text).replace(",", " ").split()]


@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: object
    source: str
    help: str
    groups: tuple
    check: object = _positive
    rule: str = "must be positive"


PARAMS = [
    # simulator
    Param("width", int, 512, "desk-scale scene", "frame width, px", ("sim", "field")),
    Param("height", int, 512, "desk-scale scene", "frame height, px", ("sim", "field")),
    Param("frames", int, 300, "desk-scale scene", "number of simulated frames", ("sim",)),
    Param("intensity_sigma", float, 0.02, "desk-scale scene", "additive intensity noise", ("sim",),
          _non_negative, "must be >= 0"),
    Param("jitter_sigma", float, 1.0, "published: registration leaves ~1 px jitter",
          "per-axis std of the global per-frame translation, px", ("sim",), _non_negative, "must be >= 0"),
    Param("sim_seed", int, 0, "chosen", "simulator seed", ("sim",), _non_negative, "must be >= 0"),
    Param("lanes", str, "", "built-in demo scene", "lane polyline file (empty: built-in demo)", ("sim",), _any),
    Param("train_frames", str, "0,60", "chosen", "frames whose truth centres become training labels",
          ("sim",), _any),
    Param("label_seed", int, 0, "chosen", "background subsampling seed", ("sim",), _non_negative, "must be >= 0"),
    # classifier
    Param("rounds", int, 200, "published: 200 boosting iterations", "boosting rounds", ("train",)),
    Param("candidate_pool", int, 250, "chosen (unstated in the method)",
          "random features examined per round", ("train",)),
    Param("train_seed", int, 0, "chosen", "feature sampling seed", ("train",), _non_negative, "must be >= 0"),
    # detection
    Param("blur_sigma", float, 3.0, "published: response blurred with sigma = 3 px", "response blur, px",
          ("detect",), _non_negative, "must be >= 0"),
    Param("growth_threshold", float, 0.0, "chosen: classifier decision boundary",
          "region growing threshold T on the blurred response", ("detect",), _any),
    Param("min_region", int, 10, "published: regions under 10 px removed", "smallest kept region, px", ("detect",)),
    # tracking
    Param("max_displacement", float, 30.0, "published: 30 px", "largest displacement per frame, px", ("track",)),
    Param("max_rotation", float, 30.0, "published: 30 deg", "largest axis rotation per frame, deg", ("track",)),
    Param("max_direction_offset", float, 30.0, "published: 30 deg",
          "largest angle between motion and car axis, deg", ("track",)),
    Param("low_speed_exemption", float, 5.0, "published: 5 px/s",
          "speed at or below which the direction gate is waived, px/s", ("track",)),
    Param("max_acceleration", float, 4.0, "published: 4 px/frame^2", "largest tracklet acceleration", ("track",)),
    Param("direction_axis", str, "first", "chosen: frame-n axis", "axis for the direction gate: first|second|mean",
          ("track",), lambda v: v in ("first", "second", "mean"), "must be first, second or mean"),
    Param("frame_rate", float, 5.0, "published: ~5 frames/s", "nominal frame rate, frames/s", ("track", "report")),
    # field
    Param("vmax", float, 30.0, "chosen: covers the displacement gate", "histogram half-range, px/frame", ("field",)),
    Param("bin_width", float, 1.0, "chosen", "histogram bin width, px/frame", ("field",)),
    Param("blob_sigma", float, 1.0, "chosen", "deposit blob std, bins", ("field",), _non_negative, "must be >= 0"),
    # rendering and reporting
    Param("speed_scale", float, 10.0, "chosen", "speed mapped to the red end of the ramp, px/frame", ("render",)),
    Param("overlay_alpha", float, 1.0, "chosen", "colour overlay opacity", ("render",),
          lambda v: 0 <= v <= 1, "must be in [0, 1]"),
    Param("ground_resolution", float, 0.23, "published: ~23 cm/px", "metres per pixel", ("report",)),
    # registration
    Param("drop_fraction", float, 0.05, "published: worst 5% removed", "fraction deleted per round", ("register",),
          lambda v: 0 < v < 1, "must be in (0, 1)"),
    Param("target_mean_err", float, 2.0, "published: stop below 2 px", "case deletion target, px", ("register",)),
    Param("min_denominator", float, 0.5, "chosen", "smallest allowed min/max ratio of the denominator",
          ("register",), lambda v: 0 <= v < 1, "must be in [0, 1)"),
    Param("patch_size", int, 75, "published: 75x75 patches", "NCC patch side, px", ("register",)),
    Param("search_radius", int, 10, "chosen", "NCC search radius, px", ("register",), _non_negative, "must be >= 0"),
    Param("grid_spacing", int, 50, "chosen", "NCC grid spacing, px", ("register",)),
    Param("cell_size", int, 200, "published: 200x200 cells", "displacement field cell, px", ("register",)),
    Param("cell_target_err", float, 1.0, "chosen", "per-cell case deletion target, px", ("register",)),
]
PARAM_BY_NAME = {p.name: p for p in PARAMS}

SUBCOMMAND_GROUPS = {
    "simulate": ("sim",),
    "train": ("train",),
    "detect": ("detect",),
    "track": ("track",),
    "build-field": ("field",),
    "render": ("render", "field"),
    "register": ("register",),
    "pipeline": ("sim", "train", "detect", "track", "field", "render", "report"),
}


def _convert(p: Param, raw):
    try:
        value = p.kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(p.name, f"cannot parse {raw!r} as {p.kind.__name__}") from None
    if p.kind is float and not math.isfinite(value):
        raise ConfigError(p.name, "must be finite")
    if not p.check(value):
        raise ConfigError(p.name, f"{p.rule} (got {raw!r})")
    return value


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input: config file {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in PARAM_BY_NAME:
            raise ConfigError(key, "unknown key")
        values[key] = val
    return values


def resolve_config(file_values: dict | None = None, cli_values: dict | None = None) -> dict:
    """Defaults, overridden by file values, overridden by command-line values."""
    cfg = {p.name: p.default for p in PARAMS}
    for layer in (file_values or {}, cli_values or {}):
        for key, raw in layer.items():
            if raw is None:
                continue
            if key not in PARAM_BY_NAME:
                raise ConfigError(key, "unknown key")
            cfg[key] = _convert(PARAM_BY_NAME[key], raw)
    if cfg["vmax"] < cfg["max_displacement"]:
        raise ConfigError("vmax", "histogram range must cover max_displacement")
    try:
        _int_list(cfg["train_frames"])
    except ValueError:
        raise ConfigError("train_frames", "expected a comma separated list of frame indices") from None
    return cfg


def write_config(path, cfg: dict) -> None:
    lines = [f"{p.name} = {cfg[p.name]}" for p in PARAMS]
    Path(path).write_text("\n".join(lines) + "\n")


# -- helpers ------------------------------------------------------------------

def workers() -> int:
    raw = os.environ.get("VF_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("VF_THREADS", f"not an integer: {raw!r}") from None
    if n < 1:
        raise ConfigError("VF_THREADS", "must be >= 1")
    return n


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input: {path}")
    return path


def frame_paths(directory) -> list[Path]:
    d = _need(directory)
    paths = sorted(d.glob("*.pgm"))
    if not paths:
        raise MissingInput(f"missing input: no .pgm frames in {d}")
    return paths


def load_frames(directory) -> list[np.ndarray]:
    return [raster.read_pgm(p) for p in frame_paths(directory)]


def gates_from(cfg) -> track.Gates:
    return track.Gates(cfg["max_displacement"], cfg["max_rotation"], cfg["max_direction_offset"],
                       cfg["low_speed_exemption"], cfg["max_acceleration"], cfg["direction_axis"])


def gate_speed_kmh(cfg) -> float:
    """The displacement gate expressed as a ground speed."""
    return cfg["max_displacement"] * cfg["ground_resolution"] * cfg["frame_rate"] * KMH_PER_MS


def _scene_lanes(cfg) -> list[sim.LaneSpec]:
    if not cfg["lanes"]:
        return sim.demo_scene()
    return sim.parse_lanes(_need(cfg["lanes"]).read_text())


# -- stages -------------------------------------------------------------------

def run_simulate(cfg, out) -> sim.SimResult:
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    lanes = _scene_lanes(cfg)
    result = sim.generate(lanes, cfg["frames"], (cfg["height"], cfg["width"]), cfg["intensity_sigma"],
                          cfg["jitter_sigma"], cfg["sim_seed"])
    for k, img in enumerate(result.frames):
        raster.write_pgm(out / "frames" / f"frame_{k:05d}.pgm", img, bits=16)
    sim.write_truth(out / "truth.csv", result.truth)
    sim.write_jitter(out / "jitter.csv", result.truth)
    sim.save_scene(out / "scene.txt", sim.SceneConfig(lanes, cfg["width"], cfg["height"], cfg["frames"],
                                                      cfg["intensity_sigma"], cfg["jitter_sigma"], cfg["sim_seed"]))
    sets = []
    for f in _int_list(cfg["train_frames"]):
        if not 0 <= f < cfg["frames"]:
            raise ConfigError("train_frames", f"frame {f} outside 0..{cfg['frames'] - 1}")
        centres = sim.truth_labels(result.truth, f)
        if len(centres):
            sets.append(classify.build_labels(centres, (cfg["height"], cfg["width"]),
                                              subsample_seed=cfg["label_seed"] + f, image_id=f))
    if not sets:
        raise ConfigError("train_frames", "no vehicles visible in the training frames")
    classify.write_labels(out / "labels.csv", classify.LabeledPixelSet.concat(sets))
    return result


def run_train(cfg, frames_dir, labels_path, out) -> classify.StrongClassifier:
    labels = classify.read_labels(_need(labels_path))
    paths = frame_paths(frames_dir)
    needed = sorted(set(labels.image.tolist()))
    if needed and needed[-1] >= len(paths):
        raise ValueError(f"labels refer to frame {needed[-1]} but only {len(paths)} frames exist")
    images = {f: raster.read_pgm(paths[f]) for f in needed}
    clf = classify.train(labels, images, cfg["rounds"], cfg["candidate_pool"], rng=cfg["train_seed"])
    classify.save_classifier(out, clf)
    return clf


def detect_frames(cfg, clf, frames) -> list[list[detect.Detection]]:
    def one(item):
        k, img = item
        return detect.detect_cars(classify.respond(clf, img), k, cfg["blur_sigma"],
                                  cfg["growth_threshold"], cfg["min_region"])[0]
    n = workers()
    if n == 1:
        return [one(item) for item in enumerate(frames)]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(one, enumerate(frames)))


def group_by_frame(dets, n_frames) -> list[list[detect.Detection]]:
    out = [[] for _ in range(n_frames)]
    for d in dets:
        if not 0 <= d.frame < n_frames:
            raise ValueError(f"detection in frame {d.frame} but only {n_frames} frames")
        out[d.frame].append(d)
    return out


def build_field(cfg, tracklets, shape) -> field.VelocityField:
    fld = field.VelocityField(shape, cfg["vmax"], cfg["bin_width"], cfg["blob_sigma"])
    return fld.deposit_many(tracklets)


def write_maps(cfg, fld, base, out) -> field.RenderedMaps:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    maps = field.render_maps(fld, base, cfg["overlay_alpha"], cfg["speed_scale"])
    raster.write_pgm(out / "speed.pgm", maps.speed)
    raster.write_pgm(out / "direction.pgm", maps.direction)
    raster.write_ppm(out / "speed.ppm", maps.speed_rgb)
    raster.write_ppm(out / "direction.ppm", maps.direction_rgb)
    return maps


def background_estimate(frames, step: int = 10) -> np.ndarray:
    """Per-pixel median of every ``step``-th frame, which suppresses passing cars."""
    return np.median(np.stack(frames[::step]), axis=0)


# -- subcommands --------------------------------------------------------------

def cmd_simulate(cfg, args):
    r = run_simulate(cfg, args.out)
    print(f"simulated {len(r.frames)} frames, {len(r.truth.tracks())} vehicles -> {args.out}")


def cmd_train(cfg, args):
    clf = run_train(cfg, args.frames, args.labels, args.out)
    print(f"trained {len(clf.rounds)} rounds -> {args.out}")


def cmd_detect(cfg, args):
    clf = classify.load_classifier(_need(args.model))
    frames = load_frames(args.frames)
    per = detect_frames(cfg, clf, frames)
    detect.write_detections(args.out, [d for ds in per for d in ds])
    print(f"{sum(map(len, per))} detections in {len(frames)} frames -> {args.out}")


def cmd_track(cfg, args):
    frames = load_frames(args.frames)
    per = group_by_frame(detect.read_detections(_need(args.detections)), len(frames))
    tr = track.track_sequence(frames, per, gates_from(cfg), cfg["frame_rate"])
    track.write_tracklets(args.out, tr)
    print(f"{len(tr)} tracklets -> {args.out}")


def cmd_build_field(cfg, args):
    tracklets = track.read_tracklets(_need(args.tracklets))
    shape = raster.read_pgm(_need(args.like)).shape if args.like else (cfg["height"], cfg["width"])
    fld = build_field(cfg, tracklets, shape)
    field.save_field(args.out, fld)
    print(f"{len(tracklets)} tracklets, {fld.touched()} pixels touched -> {args.out}")


def cmd_render(cfg, args):
    fld = field.load_field(_need(args.field), cfg["blob_sigma"])
    base = raster.read_pgm(_need(args.base))
    write_maps(cfg, fld, base, args.out)
    print(f"maps -> {args.out}")


def cmd_register(cfg, args):
    unmatched = []
    if args.correspondences:
        corrs = register.read_correspondences(_need(args.correspondences))
    elif args.src and args.dst:
        src, dst = raster.read_pgm(_need(args.src)), raster.read_pgm(_need(args.dst))
        pts = register.grid_points(src.shape, cfg["grid_spacing"], cfg["patch_size"] // 2 + 1)
        corrs, unmatched = register.match_grid(src, dst, pts, cfg["patch_size"], cfg["search_radius"])
        if args.matches:
            register.write_correspondences(args.matches, corrs)
    else:
        raise ValueError("register needs --correspondences or both --src and --dst")
    init = register.read_transform(_need(args.init)) if args.init else None
    res = register.case_deletion_fit(corrs, init, cfg["drop_fraction"], cfg["target_mean_err"],
                                     min_denominator=cfg["min_denominator"])
    register.write_transform(args.out, res.transform)
    if args.survivors:
        register.write_correspondences(args.survivors, corrs.subset(res.survivors))
    if args.displacement:
        warped = register.CorrespondenceSet(res.transform.apply_many(corrs.src), corrs.dst, corrs.weights)
        shape = (raster.read_pgm(args.dst).shape if args.dst else
                 (int(corrs.dst[:, 1].max()) + 1, int(corrs.dst[:, 0].max()) + 1))
        df = register.build_displacement_field(warped, shape, cfg["cell_size"], cfg["drop_fraction"],
                                               cfg["cell_target_err"])
        register.write_displacement_field(args.displacement, df)
    status = "converged" if res.converged else "did not converge"
    print(f"{len(corrs)} correspondences ({len(unmatched)} grid points unmatched), "
          f"{len(res.survivors)} kept, mean residual {res.mean_residual:.3f} px, {status} -> {args.out}")
    if not res.converged:
        raise RuntimeError(f"case deletion {status}: {res.reason}")


def cmd_pipeline(cfg, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", cfg)
    timing = []
    clock = time.perf_counter()

    def lap(stage):
        nonlocal clock
        now = time.perf_counter()
        timing.append((stage, now - clock))
        clock = now

    result = run_simulate(cfg, out / "sim")
    lap("simulate")
    clf = run_train(cfg, out / "sim" / "frames", out / "sim" / "labels.csv", out / "classifier.txt")
    lap("train")
    # frames are re-read from disk so the stages see exactly what the files hold
    frames = load_frames(out / "sim" / "frames")
    per = detect_frames(cfg, clf, frames)
    detect.write_detections(out / "detections.csv", [d for ds in per for d in ds])
    lap("detect")
    tracklets = track.track_sequence(frames, per, gates_from(cfg), cfg["frame_rate"])
    track.write_tracklets(out / "tracklets.csv", tracklets)
    lap("track")
    shape = frames[0].shape
    fld = build_field(cfg, tracklets, shape)
    field.save_field(out / "field.vff", fld)
    lap("build-field")
    base = background_estimate(frames)
    raster.write_pgm(out / "base.pgm", base)
    maps = write_maps(cfg, fld, base, out / "maps")
    lap("render")

    counts = field.segment_counts(tracklets, shape)
    agree = sim.lane_agreement(maps.modes.speed, maps.modes.direction, counts, result.lanes,
                               speed_tol=cfg["bin_width"])
    n_det = sum(map(len, per))
    rows = [
        ("frames", len(frames)),
        ("vehicles_in_truth", len(result.truth.tracks())),
        ("classifier_rounds", len(clf.rounds)),
        ("detections", n_det),
        ("detections_per_frame", round(n_det / len(frames), 3)),
        ("tracklets", len(tracklets)),
        ("field_pixels_touched", fld.touched()),
        ("field_coverage", round(fld.touched() / (shape[0] * shape[1]), 6)),
        ("field_total_mass", round(fld.total_mass, 6)),
        ("lane_pixels_evaluated", agree.evaluated),
        ("lane_pixels_agreeing", agree.agreeing),
        ("lane_agreement", round(agree.fraction, 6) if agree.evaluated else "nan"),
        ("gate_speed_kmh", round(gate_speed_kmh(cfg), 3)),
    ]
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerows(rows)
    width = max(len(k) for k, _ in rows)
    text = ["velfield pipeline report", ""] + [f"{k.ljust(width)}  {v}" for k, v in rows]
    text += ["", "per-lane agreement (evaluated, agreeing):"]
    text += [f"  lane {k}: {e}, {a}" for k, (e, a) in enumerate(agree.per_lane)]
    text += ["", "stage timings are in timing.csv"]
    (out / "report.txt").write_text("\n".join(text) + "\n")
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "seconds"])
        w.writerows((s, f"{t:.3f}") for s, t in timing)
    print("\n".join(text[2:2 + len(rows)]))
    print("timing: " + ", ".join(f"{s} {t:.1f}s" for s, t in timing))


COMMANDS = {
    "simulate": (cmd_simulate, "render a synthetic traffic sequence with ground truth and training labels"),
    "train": (cmd_train, "train the boosted pixel classifier"),
    "detect": (cmd_detect, "detect cars in every frame"),
    "track": (cmd_track, "link detections into three-frame tracklets"),
    "build-field": (cmd_build_field, "aggregate tracklets into the velocity field"),
    "render": (cmd_render, "draw modal speed and direction maps"),
    "register": (cmd_register, "robustly fit a polyprojective transform (and displacement field)"),
    "pipeline": (cmd_pipeline, "simulate, train, detect, track, build the field, render and report"),
}


def _io_arguments(name, sp):
    if name == "simulate":
        sp.add_argument("--out", required=True, help="output directory")
    elif name == "train":
        sp.add_argument("--frames", required=True, help="directory of .pgm frames")
        sp.add_argument("--labels", required=True, help="label CSV (frame,x,y,label)")
        sp.add_argument("--out", required=True, help="model file to write")
    elif name == "detect":
        sp.add_argument("--frames", required=True, help="directory of .pgm frames")
        sp.add_argument("--model", required=True, help="classifier model file")
        sp.add_argument("--out", required=True, help="detections CSV to write")
    elif name == "track":
        sp.add_argument("--frames", required=True, help="directory of .pgm frames")
        sp.add_argument("--detections", required=True, help="detections CSV")
        sp.add_argument("--out", required=True, help="tracklet CSV to write")
    elif name == "build-field":
        sp.add_argument("--tracklets", required=True, help="tracklet CSV")
        sp.add_argument("--like", help="image whose dimensions the field takes (else --width/--height)")
        sp.add_argument("--out", required=True, help="VFF1 field file to write")
    elif name == "render":
        sp.add_argument("--field", required=True, help="VFF1 field file")
        sp.add_argument("--base", required=True, help="base image (.pgm) shown where the field is empty")
        sp.add_argument("--out", required=True, help="output directory for speed/direction .pgm and .ppm")
    elif name == "register":
        sp.add_argument("--correspondences", help="CSV sx,sy,tx,ty[,w]")
        sp.add_argument("--src", help="source image (.pgm) for NCC grid matching")
        sp.add_argument("--dst", help="target image (.pgm) for NCC grid matching")
        sp.add_argument("--matches", help="write the NCC matches as a correspondence CSV")
        sp.add_argument("--init", help="initial transform file (default identity)")
        sp.add_argument("--out", required=True, help="transform file to write")
        sp.add_argument("--survivors", help="write the surviving correspondences")
        sp.add_argument("--displacement", help="write the per-cell residual displacement field")
    elif name == "pipeline":
        sp.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="velfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, summary) in COMMANDS.items():
        sp = sub.add_parser(name, help=summary, description=summary)
        _io_arguments(name, sp)
        sp.add_argument("--config", help="key = value file; flags override it")
        groups = SUBCOMMAND_GROUPS[name]
        opts = sp.add_argument_group("tunables (default; provenance)")
        for p in PARAMS:
            if set(p.groups) & set(groups):
                opts.add_argument("--" + p.name.replace("_", "-"), dest=p.name, default=None,
                                  metavar=p.kind.__name__.upper(),
                                  help=f"{p.help} (default {p.default!r}; {p.source})")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        groups = set(SUBCOMMAND_GROUPS[args.command])
        cli_values = {p.name: getattr(args, p.name) for p in PARAMS
                      if set(p.groups) & groups and getattr(args, p.name, None) is not None}
        cfg = resolve_config(file_values, cli_values)
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"velfield {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, MissingInput) as exc:
        msg = str(exc) if isinstance(exc, MissingInput) else f"missing input: {exc.filename or exc}"
        print(f"velfield {args.command}: error: {msg}", file=sys.stderr)
        return 3
    except Exception as exc:  # one-line diagnostic instead of a traceback
        print(f"velfield {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
