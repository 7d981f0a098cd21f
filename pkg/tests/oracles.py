"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import ndimage


def scipy_blur(image: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Gaussian blur via scipy with mirrored borders (scipy's 'reflect' repeats the edge pixel)."""
    out = ndimage.gaussian_filter(image.astype(np.float64), sigma=(sigma, sigma, 0), mode="reflect",
                                  truncate=radius / sigma)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def brute_dbscan_partition(points, eps, min_pts):
    """DBSCAN straight from the definitions.

    Returns (core clusters as frozensets of core indices, border membership sets, noise set).
    Each border point maps to the set of clusters it could join.
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    n = len(pts)
    nb = [{j for j in range(n) if math.dist(pts[i], pts[j]) <= eps} for i in range(n)]
    core = {i for i in range(n) if len(nb[i]) >= min_pts}
    # connected components of the core graph, by repeated union until fixpoint
    comp = {i: {i} for i in core}
    changed = True
    while changed:
        changed = False
        for i, j in itertools.combinations(sorted(core), 2):
            if j in nb[i] and comp[i] is not comp[j]:
                merged = comp[i] | comp[j]
                for k in merged:
                    comp[k] = merged
                changed = True
    clusters = {frozenset(c) for c in comp.values()}
    border = {}
    for i in range(n):
        if i in core:
            continue
        options = {c for c in clusters if nb[i] & c}
        if options:
            border[i] = options
    noise = set(range(n)) - core - set(border)
    return clusters, border, noise


def ellipse_zone(shape, cx, cy, a, b, half):
    """Pixels within one pixel of the analytic stroke annulus of half-width *half*."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    outer = ((xx - cx) / (a + half + 1)) ** 2 + ((yy - cy) / (b + half + 1)) ** 2 <= 1
    ia, ib = a - half - 1, b - half - 1
    if ia <= 0 or ib <= 0:
        return outer
    inner = ((xx - cx) / ia) ** 2 + ((yy - cy) / ib) ** 2 < 1
    return outer & ~inner
