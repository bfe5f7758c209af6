import json
import struct

import numpy as np
import pytest

from cvgl import io
from cvgl.attention import TokenMatrix
from cvgl.bev import BevRaster
from cvgl.errors import (
    BadMagic,
    DuplicateTileId,
    InputError,
    MalformedRow,
    MissingFile,
    TruncatedFile,
    VersionMismatch,
)
from cvgl.geometry import PointCloud

HEADER = "tile_id,lat,lon,delta_m_per_px,width_px,height_px\n"


@pytest.fixture
def cloud(rng):
    n = 50
    return PointCloud(rng.normal(size=(n, 3)).astype(np.float32),
                      rng.uniform(0, 1, (n, 3)).astype(np.float32),
                      rng.uniform(0, 1, n).astype(np.float32))


class TestPointFile:
    def test_round_trip(self, tmp_path, cloud):
        io.save_point_cloud(cloud, tmp_path / "c.pts")
        back = io.load_point_cloud(tmp_path / "c.pts")
        assert np.array_equal(back.positions, cloud.positions)
        assert np.array_equal(back.colors, cloud.colors)
        assert np.array_equal(back.confidence, cloud.confidence)

    def test_layout(self, tmp_path):
        c = PointCloud(np.array([[1.0, 2.0, 3.0]]), np.array([[0.5, 0.25, 1.0]]), np.array([0.75]))
        io.save_point_cloud(c, tmp_path / "c.pts")
        raw = (tmp_path / "c.pts").read_bytes()
        assert raw[:4] == b"CVGL"
        assert struct.unpack("<I7f", raw[4:]) == (1, 1.0, 2.0, 3.0, 0.5, 0.25, 1.0, 0.75)

    def test_truncated(self, tmp_path, cloud):
        io.save_point_cloud(cloud, tmp_path / "c.pts")
        raw = (tmp_path / "c.pts").read_bytes()
        (tmp_path / "c.pts").write_bytes(raw[:-5])
        with pytest.raises(TruncatedFile):
            io.load_point_cloud(tmp_path / "c.pts")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.pts").write_bytes(b"PLY\x00" + bytes(8))
        with pytest.raises(BadMagic):
            io.load_point_cloud(tmp_path / "c.pts")

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFile, match="nope.pts"):
            io.load_point_cloud(tmp_path / "nope.pts")


class TestTokenFile:
    def test_round_trip(self, tmp_path, rng):
        t = TokenMatrix(rng.normal(size=(7, 5)).astype(np.float32))
        io.save_tokens(t, tmp_path / "t.tok")
        assert np.array_equal(io.load_tokens(tmp_path / "t.tok").tokens, t.tokens)

    def test_header(self, tmp_path):
        io.save_tokens(np.ones((3, 2)), tmp_path / "t.tok")
        raw = (tmp_path / "t.tok").read_bytes()
        assert struct.unpack("<II", raw[:8]) == (3, 2) and len(raw) == 8 + 24

    def test_truncated(self, tmp_path):
        io.save_tokens(np.ones((3, 2)), tmp_path / "t.tok")
        (tmp_path / "t.tok").write_bytes((tmp_path / "t.tok").read_bytes()[:-1])
        with pytest.raises(TruncatedFile):
            io.load_tokens(tmp_path / "t.tok")


class TestBundle:
    def test_round_trip(self, tmp_path, scene):
        io.save_bundle(scene.bundle, tmp_path / "b")
        back = io.load_bundle(tmp_path / "b")
        b = scene.bundle
        assert np.array_equal(back.cloud.positions, b.cloud.positions)
        assert np.array_equal(back.camera_centroid, b.camera_centroid)
        assert back.metadata == b.metadata
        for fa, fb in zip(back.frames, b.frames):
            assert np.array_equal(fa.tokens.tokens, fb.tokens.tokens)
            assert np.array_equal(fa.pose.rotation, fb.pose.rotation)
            assert np.array_equal(fa.pose.translation, fb.pose.translation)
        assert sorted(back.candidates) == sorted(b.candidates)
        for tid, c in b.candidates.items():
            assert np.array_equal(back.candidates[tid].points.positions, c.points.positions)
            assert np.array_equal(back.candidates[tid].pose.rotation, c.pose.rotation)

    def test_missing_token_file_named(self, tmp_path, scene):
        io.save_bundle(scene.bundle, tmp_path / "b")
        (tmp_path / "b" / "frames" / "frame_003.tok").unlink()
        with pytest.raises(MissingFile, match="frame_003.tok"):
            io.load_bundle(tmp_path / "b")

    def test_version_mismatch(self, tmp_path, scene):
        io.save_bundle(scene.bundle, tmp_path / "b")
        m = tmp_path / "b" / "manifest.json"
        doc = json.loads(m.read_text())
        doc["version"] = 99
        m.write_text(json.dumps(doc))
        with pytest.raises(VersionMismatch):
            io.load_bundle(tmp_path / "b")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            io.load_bundle(tmp_path)

    def test_malformed_pose(self, tmp_path, scene):
        io.save_bundle(scene.bundle, tmp_path / "b")
        m = tmp_path / "b" / "manifest.json"
        doc = json.loads(m.read_text())
        doc["frames"][0]["pose"]["rotation"] = [[2, 0, 0], [0, 1, 0], [0, 0, 1]]
        m.write_text(json.dumps(doc))
        with pytest.raises(InputError):
            io.load_bundle(tmp_path / "b")


def write_gallery(tmp_path, rows, header=HEADER, tokens=True):
    (tmp_path / "tiles").mkdir(exist_ok=True)
    (tmp_path / "gallery.csv").write_text(header + "".join(r + "\n" for r in rows))
    if tokens:
        rng = np.random.default_rng(0)
        for r in rows:
            tid = r.split(",")[0]
            if tid:
                io.save_tokens(rng.uniform(0, 1, (16, 3)), tmp_path / "tiles" / f"{tid}.rgb.tok")
    return tmp_path / "gallery.csv"


class TestGallery:
    def test_three_rows(self, tmp_path):
        path = write_gallery(tmp_path, ["a,48.1,11.5,0.5,512,512", "b,48.2,11.5,0.5,512,512",
                                        "c,48.3,11.5,1.0,256,256"])
        g = io.parse_gallery_manifest(path)
        assert [t.tile_id for t in g.tiles] == ["a", "b", "c"]
        assert len(g.index) == 3
        assert g.tile("c").delta == 1.0

    def test_duplicate(self, tmp_path):
        path = write_gallery(tmp_path, ["a,48.1,11.5,0.5,512,512", "a,48.2,11.5,0.5,512,512"])
        with pytest.raises(DuplicateTileId):
            io.parse_gallery_manifest(path)

    def test_zero_delta_reports_line(self, tmp_path):
        path = write_gallery(tmp_path, ["a,48.1,11.5,0.5,512,512", "b,48.2,11.5,0,512,512"])
        with pytest.raises(MalformedRow, match="line 3"):
            io.parse_gallery_manifest(path)

    @pytest.mark.parametrize("row", ["a,85.0,11.5,0.5,512,512", "a,x,11.5,0.5,512,512",
                                     "a,48.1,11.5,0.5", ",48.1,11.5,0.5,512,512",
                                     "a,48.1,11.5,0.5,0,512"])
    def test_malformed(self, tmp_path, row):
        with pytest.raises(MalformedRow):
            io.parse_gallery_manifest(write_gallery(tmp_path, [row]))

    def test_bad_header(self, tmp_path):
        path = write_gallery(tmp_path, ["a,48.1,11.5,0.5,512,512"], header="id,lat,lon,d,w,h\n")
        with pytest.raises(MalformedRow, match="line 1"):
            io.parse_gallery_manifest(path)

    def test_missing_tile_tokens(self, tmp_path):
        path = write_gallery(tmp_path, ["a,48.1,11.5,0.5,512,512"], tokens=False)
        with pytest.raises(MissingFile, match="a.rgb.tok"):
            io.parse_gallery_manifest(path)

    def test_round_trip_with_descriptor_cache(self, tmp_path, scene):
        io.save_gallery(scene.gallery, tmp_path / "g")
        g = io.parse_gallery_manifest(tmp_path / "g")
        assert [t.tile_id for t in g.tiles] == [t.tile_id for t in scene.gallery.tiles]
        assert np.abs(g.index.descriptors - scene.gallery.index.descriptors).max() < 1e-6
        for a, b in zip(g.tiles, scene.gallery.tiles):
            assert (a.origin_lat, a.origin_lon, a.delta) == (b.origin_lat, b.origin_lon, b.delta)
        assert set(g.features) == set(scene.gallery.features)

    def test_cache_free_gallery_recomputes_descriptors(self, tmp_path, scene):
        io.save_gallery(scene.gallery, tmp_path / "g", cache_descriptors=False)
        g = io.parse_gallery_manifest(tmp_path / "g")
        assert np.array_equal(g.index.descriptors, scene.gallery.index.descriptors)


class TestOutputs:
    def test_ppm(self, tmp_path):
        px = np.zeros((2, 3, 3))
        px[1, 2] = [1.0, 0.5, 0.0]
        r = BevRaster(3, 2, px, px.sum(axis=-1) > 0)
        io.write_ppm(r, tmp_path / "x.ppm")
        assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n3 2\n255\n")
        img = io.read_ppm(tmp_path / "x.ppm")
        assert img.shape == (2, 3, 3)
        assert img[1, 2].tolist() == [255, 128, 0]

    @pytest.mark.parametrize("value,text", [
        (1.0, "1.000000"), (1 / 3, "0.333333"), (-0.0000001, "0.000000"), (2, "2"), (True, "true"),
        (None, "null"), (float("nan"), "null"), ("x", '"x"'),
    ])
    def test_canonical_scalars(self, value, text):
        assert io.canonical_json(value) == text + "\n"

    def test_canonical_sorts_keys(self):
        assert io.canonical_json({"b": [1.5], "a": {"d": 1, "c": 2}}) == '{"a":{"c":2,"d":1},"b":[1.500000]}\n'

    def test_canonical_output_is_json(self, localized):
        doc = json.loads(io.canonical_json(localized.to_dict()))
        assert doc["chosen_tile"] == localized.chosen_tile
