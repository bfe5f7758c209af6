"""``cvgl`` command line interface.

Exit codes: 0 success, 2 input error, 3 degenerate geometry.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from io import StringIO
from pathlib import Path
from typing import Optional

import click

from . import io
from .attention import BENCH_FIELDS, run_benchmark
from .bev import default_yaw_reference, render_bev
from .errors import CvglError, InputError, MissingFile
from .geometry import fit_ground_plane
from .georegistration import AbsolutePose
from .metrics import DEFAULT_KS, DEFAULT_MSR_THRESHOLDS, DEFAULT_TAUS, RankedResult, evaluate
from .pipeline import PipelineOptions, run_pipeline
from .retrieval import gem_pool, rank_gallery
from .sim import NOISY_PRESET, generate_scene
from .validation import STRATEGIES


def _out_dir(out: Optional[str]) -> Optional[Path]:
    if out is None:
        return None
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(text: str, path: Optional[Path]) -> None:
    if path is None:
        click.echo(text, nl=False)
    else:
        path.write_text(text)


def _csv_text(header, rows) -> str:
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress to stderr.")
def cli(verbose: int):
    """Cross-view UAV geo-localization toolkit."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noisy", is_flag=True, help="Use the harder noisy scene preset.")
@click.option("--out", "out", type=click.Path(file_okay=False), required=True)
def simulate(seed: int, noisy: bool, out: str):
    """Write a synthetic bundle/, gallery/ and truth.json under OUT."""
    root = _out_dir(out)
    sb = generate_scene(seed=seed, **(NOISY_PRESET if noisy else {}))
    io.save_bundle(sb.bundle, root / "bundle")
    io.save_gallery(sb.gallery, root / "gallery")
    (root / "truth.json").write_text(io.canonical_json(sb.truth_dict()))
    click.echo(f"{sb.query_id} gt_tile={sb.gt_tile_id} tiles={len(sb.gallery)} -> {root}")


@cli.command("plane-fit")
@click.argument("bundle", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=float, default=0.1, show_default=True)
@click.option("--iterations", type=int, default=1024, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False))
def plane_fit(bundle: str, seed: int, threshold: float, iterations: int, out: Optional[str]):
    """Fit the dominant ground plane of BUNDLE's point cloud."""
    b = io.load_bundle(bundle)
    plane, mask = fit_ground_plane(b.cloud, threshold, iterations, seed, camera_center=b.camera_centroid)
    doc = {"plane": plane.to_dict(), "inliers": int(mask.sum()), "points": len(mask)}
    root = _out_dir(out)
    _emit(io.canonical_json(doc), root / "plane.json" if root else None)


@cli.command()
@click.argument("bundle", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=256, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False), required=True)
def bev(bundle: str, seed: int, size: int, out: str):
    """Render the initial BEV of BUNDLE to OUT/bev.ppm."""
    if size < 1:
        raise InputError("--size must be >= 1")
    b = io.load_bundle(bundle)
    plane, _ = fit_ground_plane(b.cloud, seed=seed, camera_center=b.camera_centroid)
    view = render_bev(b.cloud, plane, default_yaw_reference(b.poses, plane), size, size)
    root = _out_dir(out)
    io.write_ppm(view.raster, root / "bev.ppm")
    doc = {"camera": view.camera.pose.to_dict(), "s_max": view.s_max,
           "occupied_fraction": view.raster.occupied_fraction}
    (root / "bev.json").write_text(io.canonical_json(doc))
    click.echo(f"wrote {root / 'bev.ppm'}")


@cli.command()
@click.argument("bundle", type=click.Path())
@click.argument("gallery", type=click.Path())
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def retrieve(bundle: str, gallery: str, k: int, seed: int):
    """Print the top-K gallery tiles for BUNDLE's initial BEV as CSV."""
    if k < 1:
        raise InputError("--k must be >= 1")
    b = io.load_bundle(bundle)
    g = io.parse_gallery_manifest(gallery)
    plane, _ = fit_ground_plane(b.cloud, seed=seed, camera_center=b.camera_centroid)
    view = render_bev(b.cloud, plane, default_yaw_reference(b.poses, plane))
    ranking = rank_gallery(gem_pool(view.raster.tokens()), g.index)[:k]
    rows = [(i, t, _fmt(s)) for i, (t, s) in enumerate(ranking, start=1)]
    click.echo(_csv_text(("rank", "tile_id", "score"), rows), nl=False)


@cli.command()
@click.argument("bundle", type=click.Path())
@click.argument("gallery", type=click.Path())
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--refine-iters", type=int, default=2, show_default=True)
@click.option("--strategy", type=click.Choice(STRATEGIES), default="feature", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--explain", is_flag=True, help="Also write per-candidate scores as CSV.")
@click.option("--out", "out", type=click.Path(file_okay=False))
def localize(bundle: str, gallery: str, k: int, refine_iters: int, strategy: str, seed: int,
             explain: bool, out: Optional[str]):
    """Run the full pipeline and write result.json."""
    opts = PipelineOptions(k=k, refine_iters=refine_iters, strategy=strategy, seed=seed)
    result = run_pipeline(io.load_bundle(bundle), io.parse_gallery_manifest(gallery), opts)
    root = _out_dir(out)
    _emit(io.canonical_json(result.to_dict()), root / "result.json" if root else None)
    if explain:
        rows = [e.to_row() for e in result.candidates]
        header = list(rows[0]) if rows else []
        text = _csv_text(header, [[_fmt(v) if isinstance(v, float) else v for v in r.values()]
                                  for r in rows])
        if root:
            (root / "candidates.csv").write_text(text)
        else:
            click.echo(text, nl=False, err=True)
    click.echo(f"chosen tile {result.chosen_tile} ({result.wall_time_s:.2f}s)", err=True)


def _load_json(path: Path, what: str) -> dict:
    if not path.exists():
        raise MissingFile(path, what)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


@cli.command("eval")
@click.option("--pred", "preds", multiple=True, required=True, type=click.Path(),
              help="Result JSON (repeatable).")
@click.option("--truth", "truths", multiple=True, required=True, type=click.Path(),
              help="Ground-truth JSON (repeatable).")
@click.option("--gallery", type=click.Path(), required=True)
@click.option("--out", "out", type=click.Path(file_okay=False), required=True)
def eval_cmd(preds, truths, gallery: str, out: str):
    """Score predictions against ground truth; writes report.json and msr.csv."""
    truth = {}
    for p in truths:
        d = _load_json(Path(p), "ground truth")
        truth[str(d.get("query_id"))] = d
    g = io.parse_gallery_manifest(gallery)
    results, pairs = [], []
    for p in preds:
        d = _load_json(Path(p), "prediction")
        qid = str(d.get("query_id"))
        if qid not in truth:
            raise InputError(f"{p}: no ground truth for query {qid!r}")
        t = truth[qid]
        try:
            ranked = [r["tile_id"] for r in d["retrieval"][-1]["ranked"]]
            results.append(RankedResult(qid, tuple(ranked), str(t["gt_tile"])))
            gt_poses = {int(x["frame_index"]): AbsolutePose.from_dict(x) for x in t["poses"]}
            for x in d["poses"]:
                pred = AbsolutePose.from_dict(x)
                if pred.frame_index not in gt_poses:
                    raise InputError(f"{p}: frame {pred.frame_index} has no ground truth")
                pairs.append((pred, gt_poses[pred.frame_index]))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise InputError(f"{p}: malformed record ({exc!r})") from None
    unknown = {r.ground_truth for r in results} - set(g.by_id)
    if unknown:
        raise InputError(f"ground-truth tiles not in gallery: {sorted(unknown)}")
    report = evaluate(results, g.tiles, pairs, DEFAULT_KS, DEFAULT_TAUS, DEFAULT_MSR_THRESHOLDS)
    root = _out_dir(out)
    (root / "report.json").write_text(io.canonical_json(report.to_dict()))
    rows = [(f"{x:g}", _fmt(v)) for x, v in report.msr.items()]
    (root / "msr.csv").write_text(_csv_text(("threshold_m", "success_rate"), rows))
    click.echo(json.dumps(report.to_dict(), sort_keys=True, indent=2))


@cli.command()
@click.option("--k-values", default="1,2,4,8,16", show_default=True)
@click.option("--n-uav", type=int, default=256, show_default=True)
@click.option("--n-sat", type=int, default=256, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False))
def bench(k_values: str, n_uav: int, n_sat: int, dim: int, repeats: int, seed: int, out: Optional[str]):
    """Time satellite-wise attention against the dense global oracle."""
    try:
        ks = tuple(int(x) for x in k_values.split(",") if x.strip())
    except ValueError:
        raise InputError(f"--k-values must be comma-separated integers, got {k_values!r}") from None
    if not ks or min(ks) < 1 or min(n_uav, n_sat, dim, repeats) < 1:
        raise InputError("benchmark sizes must be positive")
    rows = run_benchmark(ks, n_uav, n_sat, dim, repeats, seed)
    text = _csv_text(BENCH_FIELDS, [[r[f] for f in BENCH_FIELDS] for r in rows])
    root = _out_dir(out)
    _emit(text, root / "bench.csv" if root else None)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cvgl", standalone_mode=False)
    except CvglError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
