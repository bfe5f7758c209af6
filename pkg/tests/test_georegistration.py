import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from cvgl.errors import DegenerateExtent, InputError, OutOfUtmDomain, VerticalOpticalAxis, ZoneMismatch
from cvgl.geometry import PointCloud, SE3Pose
from cvgl.georegistration import (
    AbsolutePose,
    GeoTile,
    absolute_pose,
    estimate_scale,
    heading_deg,
    relative_translation,
    require_same_zone,
)
from cvgl.utm import UtmZone, latlon_to_utm, utm_to_latlon, zone_for
from oracles import PROJ_PROBES, snyder_forward, snyder_inverse


def camera_with_axis(z):
    """Camera-to-world rotation whose optical axis (third column) is ``z``."""
    z = np.asarray(z, float) / np.linalg.norm(z)
    helper = np.array([0, 0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0, 0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(z, x), z])


class TestScale:
    def test_worked_example(self):
        tile = GeoTile("t", 10.0, 10.0, 0.5, 512, 512)
        pts = np.array([[0, 0, 0], [10 / math.sqrt(2), 10 / math.sqrt(2), 0]])
        assert estimate_scale(pts, tile) == pytest.approx(36.2039, abs=1e-4)
        assert estimate_scale(pts, tile) == pytest.approx(math.hypot(256, 256) / 10, rel=1e-14)

    def test_linear_in_delta(self, rng):
        pts = rng.normal(size=(30, 3))
        a = estimate_scale(pts, GeoTile("t", 0, 0, 0.5, 100, 80))
        b = estimate_scale(pts, GeoTile("t", 0, 0, 1.0, 100, 80))
        assert b == pytest.approx(2 * a, rel=1e-15)

    @pytest.mark.parametrize("s", [0.5, 2.0, 4.0, 10.0])
    def test_isotropic_rescale(self, rng, s):
        pts = rng.normal(size=(30, 3))
        tile = GeoTile("t", 0, 0, 1.0, 64, 64)
        assert estimate_scale(s * pts, tile) == pytest.approx(estimate_scale(pts, tile) / s, rel=1e-14)

    def test_accepts_point_cloud(self, rng):
        pts = rng.normal(size=(10, 3))
        tile = GeoTile("t", 0, 0, 1.0, 64, 64)
        c = PointCloud(pts, np.zeros_like(pts), np.ones(10))
        assert estimate_scale(c, tile) == estimate_scale(pts, tile)

    def test_coincident(self):
        with pytest.raises(DegenerateExtent):
            estimate_scale(np.ones((5, 3)), GeoTile("t", 0, 0, 1.0, 64, 64))


class TestRelativeTranslation:
    def test_simple(self):
        t = relative_translation(SE3Pose(np.eye(3), [3, 4, 0]), SE3Pose(np.eye(3), [1, 1, 0]), 1.0)
        assert np.allclose(t, [2, 3, 0])

    def test_coincident(self, rng):
        p = SE3Pose(Rotation.random(random_state=1).as_matrix(), [1, 2, 3])
        assert np.allclose(relative_translation(p, p, 5.0), 0)

    def test_matches_matrix_oracle(self, rng):
        for _ in range(20):
            R = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
            sat = SE3Pose(R, rng.normal(size=3))
            uav = SE3Pose(np.eye(3), rng.normal(size=3))
            a = rng.uniform(0.1, 100)
            M = np.linalg.inv(sat.as_matrix())
            expected = a * (M @ np.append(uav.translation, 1.0))[:3]
            assert np.abs(relative_translation(uav, sat, a) - expected).max() < 1e-10

    def test_nonpositive_scale(self):
        with pytest.raises(InputError):
            relative_translation(SE3Pose.identity(), SE3Pose.identity(), 0.0)


class TestHeading:
    @pytest.mark.parametrize("axis,expected", [
        ([1, 0, 0], 0.0), ([0, 1, 0], 90.0), ([-1, 0, 0], 180.0), ([0, -1, 0], 270.0),
        ([1, 1, -1], 45.0),
    ])
    def test_axis_direction(self, axis, expected):
        uav = SE3Pose(camera_with_axis(axis), np.zeros(3))
        assert heading_deg(uav, SE3Pose.identity()) == pytest.approx(expected, abs=1e-9)

    def test_vertical_axis(self):
        uav = SE3Pose(camera_with_axis([0, 0, -1]), np.zeros(3))
        with pytest.raises(VerticalOpticalAxis):
            heading_deg(uav, SE3Pose.identity())

    def test_relative_to_satellite_frame(self):
        sat = SE3Pose(Rotation.from_euler("z", 30, degrees=True).as_matrix(), np.zeros(3))
        uav = SE3Pose(camera_with_axis([1, 0, 0]), np.zeros(3))
        assert heading_deg(uav, sat) == pytest.approx(330.0)


class TestAbsolutePose:
    def test_tile_shift_shifts_pose(self):
        a = GeoTile("a", 45.0, 9.0, 1.0, 100, 100)
        e, n, zone = a.utm
        lat, lon = utm_to_latlon(e + 120.0, n - 75.0, zone)
        b = GeoTile("b", lat, lon, 1.0, 100, 100)
        uav = SE3Pose(camera_with_axis([1, 0, -1]), np.zeros(3))
        t = np.array([12.0, -7.0, 50.0])
        pa = absolute_pose(t, uav, SE3Pose.identity(), a)
        pb = absolute_pose(t, uav, SE3Pose.identity(), b)
        assert pb.easting - pa.easting == pytest.approx(120.0, abs=1e-6)
        assert pb.northing - pa.northing == pytest.approx(-75.0, abs=1e-6)
        assert pa.heading == pb.heading == pytest.approx(0.0)

    def test_lat_lon_consistent(self):
        tile = GeoTile("a", -20.0, 130.0, 1.0, 100, 100)
        uav = SE3Pose(camera_with_axis([0, 1, -1]), np.zeros(3))
        p = absolute_pose([10.0, 20.0, 0.0], uav, SE3Pose.identity(), tile, 3)
        e, n, _ = latlon_to_utm(p.lat, p.lon, UtmZone.parse(p.zone))
        assert (e, n) == pytest.approx((p.easting, p.northing), abs=1e-6)
        assert AbsolutePose.from_dict(p.to_dict()) == p

    def test_zone_mismatch(self):
        with pytest.raises(ZoneMismatch):
            require_same_zone("31N", "32N")
        assert require_same_zone("31N", UtmZone(31, True)) == "31N"

    @pytest.mark.parametrize("lat", [84.5, -85.0, float("nan")])
    def test_tile_outside_domain(self, lat):
        with pytest.raises(InputError):
            GeoTile("x", lat, 0.0, 1.0, 10, 10)


class TestUtm:
    @pytest.mark.parametrize("lat,lon,zone,e,n", PROJ_PROBES)
    def test_proj_probes(self, lat, lon, zone, e, n):
        E, N, z = latlon_to_utm(lat, lon)
        assert str(z) == zone
        assert abs(E - e) < 0.01 and abs(N - n) < 0.01

    @pytest.mark.parametrize("lat,lon,zone,e,n", PROJ_PROBES)
    def test_independent_series(self, lat, lon, zone, e, n):
        z = UtmZone.parse(zone)
        E, N, _ = latlon_to_utm(lat, lon)
        se, sn = snyder_forward(lat, lon, z.number, z.northern)
        assert abs(E - se) < 0.01 and abs(N - sn) < 0.01
        slat, slon = snyder_inverse(E, N, z.number, z.northern)
        assert (slat, slon) == pytest.approx((lat, lon), abs=1e-7)

    @pytest.mark.parametrize("lat", [-80.0, -10.0, 0.0, 37.5, 83.0])
    def test_central_meridian_false_easting(self, lat):
        E, _, _ = latlon_to_utm(lat, 15.0)
        assert E == pytest.approx(500_000.0, abs=0.01)

    def test_round_trip_vectorized(self, rng):
        lat = rng.uniform(-84, 84, 500)
        lon = rng.uniform(-2.999, 2.999, 500) + 9.0
        zone = UtmZone(32, True)
        E, N, _ = latlon_to_utm(lat, lon, zone)
        lat2, lon2 = utm_to_latlon(E, N, zone)
        E2, N2, _ = latlon_to_utm(lat2, lon2, zone)
        assert np.abs(E2 - E).max() < 1e-6 and np.abs(N2 - N).max() < 1e-6

    @pytest.mark.parametrize("lat,lon,expected", [
        (0.0, 0.0, "31N"), (-0.0001, 0.0, "31S"), (10.0, -180.0, "1N"), (10.0, 179.999, "60N"),
        (10.0, 180.0, "1N"), (51.5, -0.12, "30N"),
    ])
    def test_zone_for(self, lat, lon, expected):
        assert str(zone_for(lat, lon)) == expected

    @pytest.mark.parametrize("lat", [84.0001, -84.5, 90.0])
    def test_out_of_domain(self, lat):
        with pytest.raises(OutOfUtmDomain):
            latlon_to_utm(lat, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-84, 84), st.floats(-180, 179.999))
    def test_round_trip_property(self, lat, lon):
        E, N, zone = latlon_to_utm(lat, lon)
        lat2, lon2 = utm_to_latlon(E, N, zone)
        E2, N2, _ = latlon_to_utm(lat2, lon2, zone)
        assert math.hypot(E2 - E, N2 - N) < 0.01
