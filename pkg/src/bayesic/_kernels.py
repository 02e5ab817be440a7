"""Hot numeric kernels.

Each kernel exists twice: a loop version compiled with numba ``@njit`` and a
vectorised numpy version.  The loop versions are used by default; setting
``BAYESIC_DISABLE_NUMBA=1`` in the environment (before import) selects the
numpy path everywhere.  Both paths are importable directly so tests and the
benchmark can compare them.
"""
import math
import os

import numpy as np

WEEK_HOURS = 168.0
EARTH_RADIUS_M = 6_371_008.8
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

NUMBA_DISABLED = os.environ.get("BAYESIC_DISABLE_NUMBA", "").lower() not in ("", "0", "false", "no")

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

USING_NUMBA = njit is not None and not NUMBA_DISABLED


def _jit(fn):
    if njit is None:
        return fn
    return njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# circular Gaussian KDE over the week
# ---------------------------------------------------------------------------


def _circular_kde_py(t, centers, bandwidth):
    out = np.empty(t.shape[0])
    n = centers.shape[0]
    norm = _INV_SQRT_2PI / (bandwidth * n)
    for i in range(t.shape[0]):
        acc = 0.0
        for j in range(n):
            base = t[i] - centers[j]
            for shift in (-WEEK_HOURS, 0.0, WEEK_HOURS):
                z = (base + shift) / bandwidth
                acc += math.exp(-0.5 * z * z)
        out[i] = acc * norm
    return out


circular_kde_numba = _jit(_circular_kde_py)


def circular_kde_numpy(t, centers, bandwidth):
    t = np.asarray(t, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    diff = t[:, None] - centers[None, :]
    acc = np.zeros(t.shape[0])
    for shift in (-WEEK_HOURS, 0.0, WEEK_HOURS):
        z = (diff + shift) / bandwidth
        acc += np.exp(-0.5 * z * z).sum(axis=1)
    return acc * (_INV_SQRT_2PI / (bandwidth * centers.shape[0]))


# ---------------------------------------------------------------------------
# univariate Gaussian mixture pdf, one mixture per query row
# ---------------------------------------------------------------------------


def _mixture_pdf_py(x, weights, means, stds):
    n, k = weights.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            z = (x[i] - means[i, j]) / stds[i, j]
            acc += weights[i, j] * _INV_SQRT_2PI / stds[i, j] * math.exp(-0.5 * z * z)
        out[i] = acc
    return out


mixture_pdf_numba = _jit(_mixture_pdf_py)


def mixture_pdf_numpy(x, weights, means, stds):
    x = np.asarray(x, dtype=np.float64)
    z = (x[:, None] - means) / stds
    return (weights * _INV_SQRT_2PI / stds * np.exp(-0.5 * z * z)).sum(axis=1)


# ---------------------------------------------------------------------------
# nearest point by haversine distance
# ---------------------------------------------------------------------------


def _nearest_haversine_py(lat, lon, lats, lons):
    """Index and distance (m) of the first entry at minimal distance."""
    best = -1
    best_d = np.inf
    p1 = math.radians(lat)
    for j in range(lats.shape[0]):
        p2 = math.radians(lats[j])
        dphi = p2 - p1
        dlmb = math.radians(lons[j] - lon)
        a = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
        d = 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))
        if d < best_d:
            best_d = d
            best = j
    return best, best_d


nearest_haversine_numba = _jit(_nearest_haversine_py)


def haversine_numpy(lat, lon, lats, lons):
    p1 = np.radians(lat)
    p2 = np.radians(np.asarray(lats, dtype=np.float64))
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lons, dtype=np.float64) - lon)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def nearest_haversine_numpy(lat, lon, lats, lons):
    if len(lats) == 0:
        return -1, np.inf
    d = haversine_numpy(lat, lon, lats, lons)
    j = int(np.argmin(d))  # argmin returns the first minimum
    return j, float(d[j])


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def circular_kde(t, centers, bandwidth):
    t = np.ascontiguousarray(t, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if USING_NUMBA:
        return circular_kde_numba(t, centers, float(bandwidth))
    return circular_kde_numpy(t, centers, float(bandwidth))


def mixture_pdf(x, weights, means, stds):
    x = np.ascontiguousarray(x, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    means = np.ascontiguousarray(means, dtype=np.float64)
    stds = np.ascontiguousarray(stds, dtype=np.float64)
    if USING_NUMBA:
        return mixture_pdf_numba(x, weights, means, stds)
    return mixture_pdf_numpy(x, weights, means, stds)


def nearest_haversine(lat, lon, lats, lons):
    lats = np.ascontiguousarray(lats, dtype=np.float64)
    lons = np.ascontiguousarray(lons, dtype=np.float64)
    if lats.shape[0] == 0:
        return -1, math.inf
    if USING_NUMBA:
        j, d = nearest_haversine_numba(float(lat), float(lon), lats, lons)
        return int(j), float(d)
    return nearest_haversine_numpy(float(lat), float(lon), lats, lons)
