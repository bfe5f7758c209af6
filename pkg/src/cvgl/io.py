"""On-disk formats.

Point cloud (``.pts``), little-endian::

    b"CVGL" | u32 count | count × (3×f32 xyz, 3×f32 rgb, f32 confidence)

Token matrix (``.tok``), little-endian::

    u32 L | u32 D | L·D × f32, row-major

Bundle directory: ``manifest.json`` referencing the point cloud, one token
file and pose per frame, and per-tile candidate predictions (pose + points).

Gallery directory: ``gallery.csv`` with header
``tile_id,lat,lon,delta_m_per_px,width_px,height_px[,descriptor_file]``.
Tile pixel colors live in ``tiles/<id>.rgb.tok`` and attention tokens in
``tiles/<id>.feat.tok``; ``descriptor_file`` (relative to the CSV) caches a
1×D descriptor. Lat/lon is the tile center.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .attention import TokenMatrix
from .bev import BevRaster
from .errors import (
    BadMagic,
    DuplicateTileId,
    InputError,
    MalformedRow,
    MissingFile,
    TruncatedFile,
    VersionMismatch,
)
from .geometry import PointCloud, SE3Pose
from .georegistration import GeoTile
from .retrieval import DEFAULT_P, GalleryIndex, GlobalDescriptor, gem_pool
from .scene import CandidatePrediction, Frame, Gallery, SceneBundle
from .utm import MAX_LAT

PathLike = Union[str, Path]

MAGIC = b"CVGL"
BUNDLE_VERSION = 1
GALLERY_COLUMNS = ("tile_id", "lat", "lon", "delta_m_per_px", "width_px", "height_px")
OPTIONAL_COLUMNS = ("descriptor_file",)


# ---------------------------------------------------------------- binary arrays

def save_point_cloud(cloud: PointCloud, path: PathLike) -> None:
    data = np.hstack([cloud.positions, cloud.colors, cloud.confidence[:, None]]).astype("<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(cloud)))
        f.write(data.tobytes())


def load_point_cloud(path: PathLike) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, "point cloud")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {raw[:4]!r}")
    (count,) = struct.unpack("<I", raw[4:8])
    need = 8 + count * 28
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes for {count} points, found {len(raw)}")
    if len(raw) > need:
        raise InputError(f"{path}: {len(raw) - need} trailing bytes")
    a = np.frombuffer(raw, dtype="<f4", offset=8, count=count * 7).reshape(count, 7).astype(np.float64)
    return PointCloud(a[:, :3], a[:, 3:6], a[:, 6])


def save_tokens(tokens: Union[TokenMatrix, np.ndarray], path: PathLike) -> None:
    t = tokens.tokens if isinstance(tokens, TokenMatrix) else np.asarray(tokens)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *t.shape))
        f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_tokens(path: PathLike, source_id: str = "") -> TokenMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, "token file")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    L, D = struct.unpack("<II", raw[:8])
    need = 8 + 4 * L * D
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes for {L}×{D} tokens, found {len(raw)}")
    if len(raw) > need:
        raise InputError(f"{path}: {len(raw) - need} trailing bytes")
    a = np.frombuffer(raw, dtype="<f4", offset=8, count=L * D).reshape(L, D).astype(np.float64)
    return TokenMatrix(a, source_id or path.stem)


# ---------------------------------------------------------------- bundles

def _read_json(path: Path, what: str) -> dict:
    if not path.exists():
        raise MissingFile(path, what)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _pose(d, where: str) -> SE3Pose:
    try:
        return SE3Pose.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{where}: malformed pose ({exc})") from None


def save_bundle(bundle: SceneBundle, directory: PathLike) -> Path:
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "candidates").mkdir(exist_ok=True)
    save_point_cloud(bundle.cloud, root / "cloud.pts")
    frames = []
    for i, f in enumerate(bundle.frames):
        rel = f"frames/frame_{i:03d}.tok"
        save_tokens(f.tokens, root / rel)
        frames.append({"tokens": rel, "pose": f.pose.to_dict()})
    cands = []
    for tid in sorted(bundle.candidates):
        c = bundle.candidates[tid]
        rel = f"candidates/{tid}.pts"
        save_point_cloud(c.points, root / rel)
        cands.append({"tile_id": tid, "pose": c.pose.to_dict(), "points": rel})
    manifest = {
        "version": BUNDLE_VERSION,
        "point_cloud": "cloud.pts",
        "camera_centroid": bundle.camera_centroid.tolist(),
        "frames": frames,
        "candidates": cands,
        "metadata": bundle.metadata,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_bundle(path: PathLike) -> SceneBundle:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    root = manifest_path.parent
    m = _read_json(manifest_path, "bundle manifest")
    if m.get("version") != BUNDLE_VERSION:
        raise VersionMismatch(f"{manifest_path}: version {m.get('version')!r}, expected {BUNDLE_VERSION}")
    try:
        cloud = load_point_cloud(root / m["point_cloud"])
        frames = [Frame(load_tokens(root / f["tokens"]), _pose(f["pose"], f"frame {i}"))
                  for i, f in enumerate(m["frames"])]
        cands = {}
        for c in m.get("candidates", []):
            tid = str(c["tile_id"])
            cands[tid] = CandidatePrediction(tid, _pose(c["pose"], f"candidate {tid}"),
                                             load_point_cloud(root / c["points"]))
        centroid = m.get("camera_centroid")
        if centroid is None:
            centroid = np.mean([f.pose.translation for f in frames], axis=0)
    except KeyError as exc:
        raise InputError(f"{manifest_path}: missing field {exc}") from None
    return SceneBundle(frames, cloud, centroid, cands, dict(m.get("metadata", {})))


# ---------------------------------------------------------------- gallery

def _parse_row(row: dict, line: int) -> GeoTile:
    tid = (row.get("tile_id") or "").strip()
    if not tid:
        raise MalformedRow(line, "empty tile_id")
    try:
        lat, lon = float(row["lat"]), float(row["lon"])
        delta = float(row["delta_m_per_px"])
        w, h = int(row["width_px"]), int(row["height_px"])
    except (TypeError, ValueError) as exc:
        raise MalformedRow(line, f"unparseable value ({exc})") from None
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise MalformedRow(line, "non-finite coordinates")
    if not delta > 0 or not math.isfinite(delta):
        raise MalformedRow(line, f"delta_m_per_px must be > 0, got {row['delta_m_per_px']!r}")
    if abs(lat) > MAX_LAT:
        raise MalformedRow(line, f"|lat| must be <= {MAX_LAT}, got {lat}")
    if w < 1 or h < 1:
        raise MalformedRow(line, "pixel size must be positive")
    return GeoTile(tid, lat, lon, delta, w, h)


def parse_gallery_manifest(path: PathLike, p: float = DEFAULT_P) -> Gallery:
    """Tiles plus descriptors (cached or computed from tile pixel tokens)."""
    path = Path(path)
    if path.is_dir():
        path = path / "gallery.csv"
    if not path.exists():
        raise MissingFile(path, "gallery manifest")
    root = path.parent
    tiles, descs, images, features = [], [], {}, {}
    seen = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = tuple(h.strip() for h in (reader.fieldnames or ()))
        if header[:len(GALLERY_COLUMNS)] != GALLERY_COLUMNS or \
                any(h not in OPTIONAL_COLUMNS for h in header[len(GALLERY_COLUMNS):]):
            raise MalformedRow(1, f"header must be {','.join(GALLERY_COLUMNS)}[,descriptor_file]")
        reader.fieldnames = list(header)
        for row in reader:
            line = reader.line_num
            if None in row or any(row.get(c) is None for c in GALLERY_COLUMNS):
                raise MalformedRow(line, "wrong number of fields")
            tile = _parse_row(row, line)
            if tile.tile_id in seen:
                raise DuplicateTileId(
                    f"tile id {tile.tile_id!r} on line {line} already defined on line {seen[tile.tile_id]}")
            seen[tile.tile_id] = line
            tiles.append(tile)
            rgb = root / "tiles" / f"{tile.tile_id}.rgb.tok"
            feat = root / "tiles" / f"{tile.tile_id}.feat.tok"
            if rgb.exists():
                images[tile.tile_id] = load_tokens(rgb, tile.tile_id)
            if feat.exists():
                features[tile.tile_id] = load_tokens(feat, tile.tile_id)
            desc_file = (row.get("descriptor_file") or "").strip()
            if desc_file:
                v = load_tokens(root / desc_file, tile.tile_id).tokens.reshape(-1)
                descs.append(GlobalDescriptor(v / np.linalg.norm(v)))
            elif tile.tile_id in images:
                descs.append(gem_pool(images[tile.tile_id], p))
            else:
                raise MissingFile(rgb, f"pixel tokens for tile {tile.tile_id!r} (line {line})")
    index = GalleryIndex.build([t.tile_id for t in tiles], descs)
    return Gallery(tiles, index, features, images)


def save_gallery(gallery: Gallery, directory: PathLike, cache_descriptors: bool = True) -> Path:
    root = Path(directory)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    if cache_descriptors:
        (root / "descriptors").mkdir(exist_ok=True)
    rows = []
    for i, t in enumerate(gallery.tiles):
        if t.tile_id in gallery.images:
            save_tokens(gallery.images[t.tile_id], root / "tiles" / f"{t.tile_id}.rgb.tok")
        if t.tile_id in gallery.features:
            save_tokens(gallery.features[t.tile_id], root / "tiles" / f"{t.tile_id}.feat.tok")
        desc = ""
        if cache_descriptors:
            desc = f"descriptors/{t.tile_id}.tok"
            save_tokens(gallery.index.descriptors[i][None, :], root / desc)
        rows.append([t.tile_id, repr(t.origin_lat), repr(t.origin_lon), repr(t.delta),
                     t.width, t.height, desc])
    with open(root / "gallery.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GALLERY_COLUMNS + OPTIONAL_COLUMNS)
        w.writerows(rows)
    return root / "gallery.csv"


# ---------------------------------------------------------------- rasters / JSON

def raster_to_ppm(raster: BevRaster) -> bytes:
    px = np.clip(np.rint(raster.pixels * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{raster.width} {raster.height}\n255\n".encode() + px.tobytes()


def write_ppm(raster: BevRaster, path: PathLike) -> None:
    Path(path).write_bytes(raster_to_ppm(raster))


def read_ppm(path: PathLike) -> np.ndarray:
    """(H, W, 3) uint8 array from a binary P6 file."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise BadMagic(f"{path}: not a P6 file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PPM supported")
    data = parts[4]
    if len(data) < w * h * 3:
        raise TruncatedFile(f"{path}: pixel data truncated")
    return np.frombuffer(data[:w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def _canonical(obj) -> str:
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + _canonical(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        s = f"{x:.6f}"
        return "0.000000" if s == "-0.000000" else s
    return json.dumps(str(obj))


def canonical_json(obj) -> str:
    """Sorted keys, compact separators, floats fixed at 6 decimals."""
    return _canonical(obj) + "\n"


def write_result(result, path: PathLike) -> None:
    Path(path).write_text(canonical_json(result.to_dict()))
