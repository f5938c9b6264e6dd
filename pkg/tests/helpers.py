"""Shared test oracles: central finite differences and 3-D vector geodesy.

These stay deliberately independent of the library code paths they check:
the geodesy oracle works on 3-D unit vectors instead of spherical-trig
formulas, and the gradient oracle perturbs raw parameter arrays.
"""

import math

import numpy as np

from modegan.geokin import EARTH_RADIUS_M, GpsPoint


def finite_diff_grad(loss_fn, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = grad.reshape(-1)
    base = arr.astype(np.float64).copy()
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        flat[i] = (loss_fn(plus.reshape(arr.shape))
                   - loss_fn(minus.reshape(arr.shape))) / (2 * eps)
    return grad


def max_rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float(np.max(np.abs(got - want) / scale))


# --- geodesy oracle (3-D vector geometry, no spherical trig formulas) ------

def _unit_vector(p: GpsPoint) -> np.ndarray:
    return np.array([
        math.cos(p.lat) * math.cos(p.lon),
        math.cos(p.lat) * math.sin(p.lon),
        math.sin(p.lat),
    ])


def oracle_distance(p1: GpsPoint, p2: GpsPoint) -> float:
    a, b = _unit_vector(p1), _unit_vector(p2)
    return EARTH_RADIUS_M * math.atan2(np.linalg.norm(np.cross(a, b)),
                                       float(np.dot(a, b)))


def oracle_bearing(p1: GpsPoint, p2: GpsPoint) -> float:
    """Initial bearing via the tangent of the great circle at p1."""
    a, b = _unit_vector(p1), _unit_vector(p2)
    tangent = b - float(np.dot(a, b)) * a
    up = np.array([0.0, 0.0, 1.0])
    east = np.cross(up, a)
    east /= np.linalg.norm(east)
    north = np.cross(a, east)
    return math.degrees(math.atan2(float(np.dot(tangent, east)),
                                   float(np.dot(tangent, north)))) % 360.0


def angle_diff_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def random_point(rng: np.random.Generator, lat_limit_deg: float = 80.0) -> GpsPoint:
    return GpsPoint.from_degrees(
        rng.uniform(-lat_limit_deg, lat_limit_deg),
        rng.uniform(-180.0, 180.0),
        0.0,
    )
