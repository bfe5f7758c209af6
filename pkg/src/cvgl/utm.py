"""WGS84 <-> UTM via the Krüger n-series (6th order).

Accurate to well below a millimetre inside a zone. Standard 6° zones only;
the Norway/Svalbard exceptions are not applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfUtmDomain

A_WGS84 = 6378137.0
F_WGS84 = 1.0 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500_000.0
FALSE_NORTHING_SOUTH = 10_000_000.0
MAX_LAT = 84.0

_n = F_WGS84 / (2.0 - F_WGS84)
_e = np.sqrt(F_WGS84 * (2.0 - F_WGS84))
_A = A_WGS84 / (1.0 + _n) * (1.0 + _n**2 / 4.0 + _n**4 / 64.0 + _n**6 / 256.0)

_ALPHA = np.array([
    _n / 2 - 2 * _n**2 / 3 + 5 * _n**3 / 16 + 41 * _n**4 / 180 - 127 * _n**5 / 288 + 7891 * _n**6 / 37800,
    13 * _n**2 / 48 - 3 * _n**3 / 5 + 557 * _n**4 / 1440 + 281 * _n**5 / 630 - 1983433 * _n**6 / 1935360,
    61 * _n**3 / 240 - 103 * _n**4 / 140 + 15061 * _n**5 / 26880 + 167603 * _n**6 / 181440,
    49561 * _n**4 / 161280 - 179 * _n**5 / 168 + 6601661 * _n**6 / 7257600,
    34729 * _n**5 / 80640 - 3418889 * _n**6 / 1995840,
    212378941 * _n**6 / 319334400,
])
_BETA = np.array([
    _n / 2 - 2 * _n**2 / 3 + 37 * _n**3 / 96 - _n**4 / 360 - 81 * _n**5 / 512 + 96199 * _n**6 / 604800,
    _n**2 / 48 + _n**3 / 15 - 437 * _n**4 / 1440 + 46 * _n**5 / 105 - 1118711 * _n**6 / 3870720,
    17 * _n**3 / 480 - 37 * _n**4 / 840 - 209 * _n**5 / 4480 + 5569 * _n**6 / 90720,
    4397 * _n**4 / 161280 - 11 * _n**5 / 504 - 830251 * _n**6 / 7257600,
    4583 * _n**5 / 161280 - 108847 * _n**6 / 3991680,
    20648693 * _n**6 / 638668800,
])
_J = np.arange(1, 7)


@dataclass(frozen=True)
class UtmZone:
    number: int
    northern: bool

    @property
    def central_meridian(self) -> float:
        return (self.number - 1) * 6.0 - 180.0 + 3.0

    def __str__(self) -> str:
        return f"{self.number}{'N' if self.northern else 'S'}"

    @classmethod
    def parse(cls, s: str) -> "UtmZone":
        return cls(int(s[:-1]), s[-1].upper() == "N")


def zone_for(lat: float, lon: float) -> UtmZone:
    lon = ((float(lon) + 180.0) % 360.0) - 180.0
    number = min(int(np.floor((lon + 180.0) / 6.0)) + 1, 60)
    return UtmZone(number, float(lat) >= 0.0)


def _check_lat(lat):
    lat = np.asarray(lat, dtype=np.float64)
    if not np.isfinite(lat).all() or (np.abs(lat) > MAX_LAT).any():
        raise OutOfUtmDomain(f"latitude outside [-{MAX_LAT}, {MAX_LAT}]")
    return lat


def latlon_to_utm(lat, lon, zone: UtmZone | None = None):
    """Forward projection. Returns ``(easting, northing, zone)``.

    Passing ``zone`` pins the projection to that zone (and hemisphere) instead
    of the natural one for the first coordinate.
    """
    lat = _check_lat(lat)
    lon = np.asarray(lon, dtype=np.float64)
    if not np.isfinite(lon).all():
        raise OutOfUtmDomain("non-finite longitude")
    if zone is None:
        zone = zone_for(lat.flat[0], lon.flat[0])
    phi = np.radians(lat)
    dlam = np.radians(((lon - zone.central_meridian + 180.0) % 360.0) - 180.0)
    t = np.sinh(np.arctanh(np.sin(phi)) - _e * np.arctanh(_e * np.sin(phi)))
    xi_p = np.arctan2(t, np.cos(dlam))
    eta_p = np.arctanh(np.sin(dlam) / np.sqrt(1.0 + t * t))
    j2 = 2.0 * _J.reshape((-1,) + (1,) * np.ndim(xi_p))
    a = _ALPHA.reshape(j2.shape)
    xi = xi_p + (a * np.sin(j2 * xi_p) * np.cosh(j2 * eta_p)).sum(axis=0)
    eta = eta_p + (a * np.cos(j2 * xi_p) * np.sinh(j2 * eta_p)).sum(axis=0)
    easting = FALSE_EASTING + K0 * _A * eta
    northing = K0 * _A * xi + (0.0 if zone.northern else FALSE_NORTHING_SOUTH)
    if np.ndim(easting) == 0:
        return float(easting), float(northing), zone
    return easting, northing, zone


def utm_to_latlon(easting, northing, zone: UtmZone):
    """Inverse projection. Returns ``(lat, lon)`` in degrees."""
    easting = np.asarray(easting, dtype=np.float64)
    northing = np.asarray(northing, dtype=np.float64)
    if not (np.isfinite(easting).all() and np.isfinite(northing).all()):
        raise OutOfUtmDomain("non-finite UTM coordinates")
    y = northing - (0.0 if zone.northern else FALSE_NORTHING_SOUTH)
    xi = y / (K0 * _A)
    eta = (easting - FALSE_EASTING) / (K0 * _A)
    j2 = 2.0 * _J.reshape((-1,) + (1,) * np.ndim(xi))
    b = _BETA.reshape(j2.shape)
    xi_p = xi - (b * np.sin(j2 * xi) * np.cosh(j2 * eta)).sum(axis=0)
    eta_p = eta - (b * np.cos(j2 * xi) * np.sinh(j2 * eta)).sum(axis=0)
    tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))

    e2 = _e * _e
    tau = tau_p.copy() if np.ndim(tau_p) else float(tau_p)
    for _ in range(8):
        sigma = np.sinh(_e * np.arctanh(_e * tau / np.sqrt(1.0 + tau * tau)))
        tau_i = tau * np.sqrt(1.0 + sigma * sigma) - sigma * np.sqrt(1.0 + tau * tau)
        dtau = ((tau_p - tau_i) / np.sqrt(1.0 + tau_i * tau_i)
                * (1.0 + (1.0 - e2) * tau * tau) / ((1.0 - e2) * np.sqrt(1.0 + tau * tau)))
        tau = tau + dtau
        if np.all(np.abs(dtau) < 1e-14):
            break
    lat = np.degrees(np.arctan(tau))
    lon = ((np.degrees(lam) + zone.central_meridian + 180.0) % 360.0) - 180.0
    if np.ndim(lat) == 0:
        return float(lat), float(lon)
    return lat, lon
