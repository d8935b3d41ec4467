"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 solver failure (no pose or an
uncertified search).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import config as cfgmod
from . import io
from .evaluation import evaluate
from .exceptions import SatCMError
from .geometry import AxisAngle, PixelLine, Pose
from .landscape import landscape as compute_landscape
from .landscape import write_landscape_csv
from .mapping import FrameInput, build_line_map
from .pipeline import PipelineConfig, relocalize
from .synth import DIRECTION_MODES, SceneSpec, synth_scene

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2

log = logging.getLogger("satcm")


def _solve_one(args):
    query, map_lines, config = args
    prior = query.prior
    side = query.side_length if prior is not None else None
    return relocalize(query.normalized(), map_lines, query.intrinsics, config, prior=prior,
                      submap=query.submap, prior_side_length=side)


def _ordered_map(fn, items, workers: int):
    """Results in input order, optionally computed in worker processes."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@click.group()
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level):
    """Globally optimal line-based relocalization with saturated consensus."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


def _config_options(fn):
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a dotted config key, e.g. rotation.epsilon_r=0.02.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                      help="JSON config file.")(fn)
    return fn


@cli.command()
@click.argument("map_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("queries", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int, help="Unused by the solver; recorded.")
@_config_options
def solve(map_path, queries, out_dir, workers, seed, config_path, overrides):
    """Estimate the pose of every QUERY in the line map MAP_PATH."""
    config = cfgmod.pipeline_config(config_path, overrides)
    map_lines, _ = io.read_line_map(map_path)
    loaded = [io.read_query(q) for q in queries]
    results = _ordered_map(_solve_one, [(q, map_lines, config) for q in loaded], workers)
    os.makedirs(out_dir, exist_ok=True)
    status = EXIT_OK
    for q, res in zip(loaded, results):
        io.write_result(os.path.join(out_dir, f"{q.name}.json"), res)
        ok = res.success and res.certified
        click.echo(f"{q.name}: {'ok' if ok else 'FAIL'} {res.message} "
                   f"t={res.timings_ms.get('total', math.nan):.0f}ms")
        if not ok:
            status = EXIT_SOLVER
    return status


def _read_manifest(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: {exc}") from exc
    root = os.path.dirname(os.path.abspath(path))
    default_intr = io.intrinsics_from_dict(data["intrinsics"]) if "intrinsics" in data else None
    frames = []
    try:
        for rec in data["frames"]:
            intr = io.intrinsics_from_dict(rec["intrinsics"]) if "intrinsics" in rec else default_intr
            if intr is None:
                raise io.FormatError("frame without intrinsics")
            depth = np.load(os.path.join(root, rec["depth"])) * float(rec.get("depth_scale", 1.0))
            segs = [PixelLine.from_endpoints(*np.asarray(s["endpoints_px"], dtype=float), int(s["label"]))
                    for s in rec.get("segments", [])]
            frames.append(FrameInput(io.pose_from_dict(rec["pose"]), intr, depth, segs))
    except (KeyError, TypeError) as exc:
        raise io.FormatError(f"malformed frame manifest: {exc}") from exc
    dictionary = {int(d["id"]): str(d["word"]) for d in data.get("dictionary", [])}
    return frames, dictionary


@cli.command("build-map")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_config_options
def build_map(manifest, out_path, config_path, overrides):
    """Build a semantic line map from posed RGB-D frames listed in MANIFEST."""
    config = cfgmod.map_builder_config(config_path, overrides)
    frames, dictionary = _read_manifest(manifest)
    lines = build_line_map(frames, config)
    io.write_line_map(out_path, lines, dictionary or None)
    click.echo(f"registered {len(lines)} lines from {len(frames)} frames")
    return EXIT_OK


def _synth_spec(seed, n_map_lines, n_labels, k, noise, match_fraction, n_queries, directions, min_per_label):
    return SceneSpec(seed=seed, n_map_lines=n_map_lines, n_labels=n_labels, K=k, noise=noise,
                     match_fraction=match_fraction, n_queries=n_queries, directions=directions,
                     min_per_label=min_per_label)


def _scene_options(fn):
    for opt in reversed([
        click.option("--n-map-lines", default=20, show_default=True, type=click.IntRange(min=0)),
        click.option("--n-labels", default=3, show_default=True, type=click.IntRange(min=1)),
        click.option("--k", "k", default=15, show_default=True, type=click.IntRange(min=1),
                     help="Query lines per query."),
        click.option("--noise", default=0.0, show_default=True, type=click.FloatRange(min=0.0)),
        click.option("--match-fraction", default=1.0, show_default=True, type=click.FloatRange(0.0, 1.0)),
        click.option("--directions", default="indoor", show_default=True, type=click.Choice(DIRECTION_MODES)),
        click.option("--min-per-label", default=0, show_default=True, type=click.IntRange(min=0)),
    ]):
        fn = opt(fn)
    return fn


def _prior_from_pose(pose: Pose) -> AxisAngle:
    return AxisAngle.from_matrix(pose.rotation.T)


@cli.command()
@click.option("-o", "--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-queries", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--prior-side", type=click.Choice(["pi", "pi/2"]), default=None,
              help="Store the ground-truth axis as a retrieval prior of this cell size.")
@_scene_options
def synth(out_dir, seed, n_queries, prior_side, n_map_lines, n_labels, k, noise, match_fraction, directions,
          min_per_label):
    """Write a seeded synthetic map and queries with ground-truth poses."""
    spec = _synth_spec(seed, n_map_lines, n_labels, k, noise, match_fraction, n_queries, directions,
                       min_per_label)
    scene = synth_scene(spec)
    os.makedirs(out_dir, exist_ok=True)
    io.write_line_map(os.path.join(out_dir, "map.json"), scene.map_lines,
                      {i: f"class_{i}" for i in range(n_labels)})
    for i, q in enumerate(scene.queries):
        prior = _prior_from_pose(q.pose) if prior_side else None
        qf = io.QueryFile(q.intrinsics, q.pixel_lines(), prior, prior_side, None, q.pose,
                          extra={"true_match": q.true_match})
        io.write_query(os.path.join(out_dir, f"query_{i:03d}.json"), qf)
    click.echo(f"wrote {len(scene.map_lines)} map lines and {n_queries} queries to {out_dir}")
    return EXIT_OK


@cli.command("landscape")
@click.argument("map_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("query_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--resolution", default=1.0, show_default=True, type=click.FloatRange(min=0.0, min_open=True),
              help="Grid step in degrees.")
@click.option("--kinds", default="identity,likelihood", show_default=True)
@click.option("--q", default=0.9, show_default=True, type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True))
@click.option("--epsilon", default=0.015, show_default=True, type=click.FloatRange(min=0.0, min_open=True))
def landscape_cmd(map_path, query_path, out_path, resolution, kinds, q, epsilon):
    """Dump normalized objective grids over rotation axes as CSV."""
    map_lines, _ = io.read_line_map(map_path)
    query = io.read_query(query_path)
    kinds = [x.strip() for x in kinds.split(",") if x.strip()]
    grids = compute_landscape(query.normalized(), map_lines, resolution, kinds, q, epsilon)
    write_landscape_csv(out_path, grids)
    for kind, g in grids.items():
        a = g.argmax_axis()
        click.echo(f"{kind}: argmax alpha={math.degrees(a.alpha):.2f} phi={math.degrees(a.phi):.2f}")
    return EXIT_OK


@cli.command("eval")
@click.argument("results_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("queries_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None)
def eval_cmd(results_dir, queries_dir, out_path):
    """Compare results with the ground-truth poses stored in the query files."""
    names = sorted(f[:-5] for f in os.listdir(queries_dir) if f.endswith(".json") and f != "map.json")
    results, truth, times = [], [], []
    for name in names:
        query = io.read_query(os.path.join(queries_dir, f"{name}.json"))
        if query.gt_pose is None:
            raise io.FormatError(f"{name}: query has no ground-truth pose")
        path = os.path.join(results_dir, f"{name}.json")
        res = io.read_result(path) if os.path.exists(path) else None
        results.append(res.pose if res else None)
        times.append(res.timings_ms.get("total", math.nan) if res else math.nan)
        truth.append(query.gt_pose)
    report = evaluate(results, truth, timings_ms=times)
    summary = report.summary()
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(summary, fh, indent=1)
    q = report.rotation_quantiles
    t = report.translation_quantiles
    click.echo(f"n={report.n} failed={report.n_failed}")
    click.echo(f"rotation deg 25/50/75: {q[0]:.3f} {q[1]:.3f} {q[2]:.3f}  recall@5deg {report.rotation_recall[5.0]:.3f}")
    click.echo(f"translation cm 25/50/75: {t[0]:.2f} {t[1]:.2f} {t[2]:.2f}  recall@5/10/15cm "
               + " ".join(f"{report.translation_recall[k]:.3f}" for k in (5.0, 10.0, 15.0)))
    return EXIT_OK


def _sweep_task(args):
    spec, q, side, base = args
    scene = synth_scene(spec)
    query = scene.queries[0]
    config = cfgmod.set_key(base, "q", q)
    res = relocalize(query.lines, scene.map_lines, query.intrinsics, config,
                     prior=_prior_from_pose(query.pose), prior_side_length=side)
    return res.pose, query.pose


def sweep_q(qs, specs, side="pi", base: PipelineConfig | None = None, workers: int = 1):
    """Recall statistics of the full pipeline for every q on the given scenes."""
    base = base or PipelineConfig()
    rows = []
    for q in qs:
        out = _ordered_map(_sweep_task, [(s, q, side, base) for s in specs], workers)
        report = evaluate([p for p, _ in out], [g for _, g in out])
        rows.append((q, report))
    return rows


@cli.command("sweep-q")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--qs", default="0.6,0.7,0.8,0.9,0.99", show_default=True)
@click.option("--n-seeds", default=20, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int, help="First scene seed.")
@click.option("--prior-side", type=click.Choice(["pi", "pi/2", "none"]), default="pi", show_default=True)
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@_scene_options
@_config_options
def sweep_q_cmd(out_path, qs, n_seeds, seed, prior_side, workers, n_map_lines, n_labels, k, noise,
                match_fraction, directions, min_per_label, config_path, overrides):
    """Recall versus the likelihood parameter q on a synthetic suite (CSV)."""
    try:
        q_values = [float(x) for x in qs.split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--qs") from exc
    if not q_values or any(not 0.0 < q < 1.0 for q in q_values):
        raise click.BadParameter("every q must lie in (0, 1)", param_hint="--qs")
    base = cfgmod.pipeline_config(config_path, overrides)
    specs = [_synth_spec(seed + i, n_map_lines, n_labels, k, noise, match_fraction, 1, directions,
                         min_per_label) for i in range(n_seeds)]
    rows = sweep_q(q_values, specs, None if prior_side == "none" else prior_side, base, workers)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "recall_5deg", "recall_5cm", "recall_10cm", "recall_15cm", "rot_median_deg",
                    "trans_median_cm"])
        for q, rep in rows:
            w.writerow([q, rep.rotation_recall[5.0], *(rep.translation_recall[t] for t in (5.0, 10.0, 15.0)),
                        rep.rotation_quantiles[1], rep.translation_quantiles[1]])
            click.echo(f"q={q}: recall@5deg={rep.rotation_recall[5.0]:.3f}")
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point mapping errors onto the documented exit codes."""
    try:
        rv = cli.main(args=argv, prog_name="satcm", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INVALID
    except click.ClickException as exc:
        exc.show()
        return EXIT_INVALID
    except (SatCMError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
