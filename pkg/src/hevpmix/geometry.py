"""Sites, knots and the normalized Gaussian kernel basis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateWeightsError, DomainError


@dataclass(frozen=True)
class Site:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DomainError(f"site coordinates must be finite, got ({self.x}, {self.y})")


def as_coords(points) -> np.ndarray:
    """Coerce a sequence of Site objects or an (n, 2) array to an (n, 2) float array."""
    if isinstance(points, KnotSet):
        return points.coords
    if isinstance(points, Site):
        return np.array([[points.x, points.y]], dtype=float)
    if len(points) and isinstance(points[0], Site):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"expected (n, 2) coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("site coordinates must be finite")
    return arr


class KnotSet:
    """Ordered, duplicate-free set of knot locations."""

    def __init__(self, knots):
        coords = as_coords(knots)
        if coords.shape[0] < 1:
            raise DomainError("a knot set needs at least one knot")
        _, counts = np.unique(coords, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise DomainError("duplicate knots are not allowed")
        self.coords = coords
        self.coords.setflags(write=False)

    def __len__(self):
        return self.coords.shape[0]

    def __iter__(self):
        return (Site(float(x), float(y)) for x, y in self.coords)

    def __repr__(self):
        return f"KnotSet(L={len(self)})"


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float

    def __post_init__(self):
        _check_bandwidth(self.bandwidth)


@dataclass(frozen=True)
class WeightMatrix:
    """Kernel basis weights, one simplex row per site."""

    w: np.ndarray
    sites: np.ndarray
    knots: KnotSet

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def L(self) -> int:
        return self.w.shape[1]


def _check_bandwidth(tau):
    if not (np.isfinite(tau) and tau > 0):
        raise DomainError(f"kernel bandwidth must be positive, got {tau}")


def grid_sites(nx: int, ny: int | None = None, lo: float = 1.0, hi: float | None = None) -> np.ndarray:
    """Regular grid covering [lo, hi]^2 with unit spacing by default.

    ``grid_sites(7)`` gives the 49 points of {1,...,7}^2.
    """
    ny = nx if ny is None else ny
    hi_x = lo + nx - 1 if hi is None else hi
    hi_y = lo + ny - 1 if hi is None else hi
    gx = np.linspace(lo, hi_x, nx)
    gy = np.linspace(lo, hi_y, ny)
    xx, yy = np.meshgrid(gx, gy, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def pairwise_distances(a, b=None) -> np.ndarray:
    a = as_coords(a)
    b = a if b is None else as_coords(b)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def gaussian_kernel(s, v, tau: float) -> float:
    """Isotropic bivariate normal kernel K(s | v, tau)."""
    _check_bandwidth(tau)
    s = as_coords(s)[0]
    v = as_coords(v)[0]
    d2 = float(np.sum((s - v) ** 2))
    return float(np.exp(-d2 / (2.0 * tau * tau)) / (2.0 * np.pi * tau * tau))


def log_kernel_matrix(sites, knots, tau: float) -> np.ndarray:
    _check_bandwidth(tau)
    s = as_coords(sites)
    v = as_coords(knots)
    # overflow and underflow here surface as non-finite rows, checked by the callers
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        d2 = np.sum((s[:, None, :] - v[None, :, :]) ** 2, axis=-1)
        return -d2 / (2.0 * tau * tau) - np.log(2.0 * np.pi * tau * tau)


def kernel_weight_array(sites, knots, tau: float) -> np.ndarray:
    """Row-normalized kernel weights as a bare (n, L) array.

    Normalization is done in log space after subtracting the row maximum, so
    sites far from every knot still get a valid simplex row.
    """
    logk = log_kernel_matrix(sites, knots, tau)
    row_max = np.max(logk, axis=1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        bad = np.flatnonzero(~np.isfinite(row_max[:, 0]))
        raise DegenerateWeightsError(f"kernel weights undefined for site rows {bad.tolist()}")
    k = np.exp(logk - row_max)
    total = np.sum(k, axis=1, keepdims=True)
    return k / total


def kernel_weights(sites: Sequence[Site] | np.ndarray, knots: KnotSet, tau: float) -> WeightMatrix:
    if not isinstance(knots, KnotSet):
        knots = KnotSet(knots)
    s = as_coords(sites)
    if s.shape[0] == 0:
        raise DomainError("need at least one site")
    return WeightMatrix(kernel_weight_array(s, knots.coords, tau), s, knots)


def median_knot_spacing(knots) -> float:
    """Median pairwise distance between distinct knots (1.0 for a single knot)."""
    v = as_coords(knots)
    if v.shape[0] < 2:
        return 1.0
    d = pairwise_distances(v)
    iu = np.triu_indices(v.shape[0], k=1)
    return float(np.median(d[iu]))
