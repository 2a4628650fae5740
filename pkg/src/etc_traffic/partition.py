"""Conic covering of the state space and classification into regions.

A region ``(i, j)`` is the intersection of band ``i`` (between the manifold
approximations of ``tau_i`` and ``tau_{i+1}``) with cone ``j``. Indices are
1-based throughout, matching the usual ``R_{i,j}`` labelling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .isochron import MuFunction, region_bands


FACE_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class Cone:
    """The polyhedral cone ``{x : E x >= 0}``."""

    E: np.ndarray
    index: int
    angles: tuple[float, float] | None = None

    def __post_init__(self):
        E = np.array(self.E, dtype=float, ndmin=2)
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        return self.E.shape[1]

    def contains(self, X) -> np.ndarray:
        """Membership with a rounding allowance so shared faces belong to both sides."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        slack = FACE_RTOL * np.linalg.norm(X, axis=1, keepdims=True)
        return np.all(X @ self.E.T >= -slack, axis=1)

    def __eq__(self, other):
        if not isinstance(other, Cone):
            return NotImplemented
        return (self.index == other.index and self.angles == other.angles
                and np.array_equal(self.E, other.E))

    def __hash__(self):
        return hash((self.index, self.angles, self.E.tobytes()))


def cone_contains(c: Cone, x) -> bool:
    return bool(c.contains(np.asarray(x, dtype=float)[None])[0])


def build_cones(m: int, n: int = 2) -> list[Cone]:
    """``m`` equal angular sectors of the plane, the first starting at angle 0."""
    if m < 2:
        raise ValueError("need at least two cones")
    if n != 2:
        raise ValueError("cones for n > 2 must be supplied as constraint matrices")
    edges = 2 * np.pi * np.arange(m) / m
    # normals are shared between neighbours so boundary points are never lost
    lower = np.stack([-np.sin(edges), np.cos(edges)], axis=1)
    cones = []
    for j in range(m):
        upper = -lower[(j + 1) % m]
        lo_angle = float(edges[j])
        hi_angle = float(2 * np.pi * (j + 1) / m)
        cones.append(Cone(np.stack([lower[j], upper]), j + 1, (lo_angle, hi_angle)))
    return cones


def cones_from_matrices(mats: Sequence) -> list[Cone]:
    """Cones from user constraint matrices; each must have nonempty interior."""
    cones = []
    for j, E in enumerate(mats):
        E = np.array(E, dtype=float, ndmin=2)
        if not _is_solid(E):
            raise ValueError(f"cone {j + 1} has empty interior")
        cones.append(Cone(E, j + 1))
    if len({c.n for c in cones}) > 1:
        raise ValueError("cone matrices disagree on the dimension")
    return cones


def _is_solid(E: np.ndarray) -> bool:
    # maximise t subject to E x >= t, -1 <= x <= 1
    k, n = E.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.hstack([-E, np.ones((k, 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(k), bounds=[(-1, 1)] * n + [(None, 1)],
                  method="highs")
    return res.status == 0 and -res.fun > 1e-9


def cone_index(cones: Sequence[Cone], X) -> np.ndarray:
    """Lowest 1-based index of a cone containing each row (0 if none)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0], dtype=int)
    for c in reversed(cones):
        out = np.where(c.contains(X), c.index, out)
    return out


@dataclass(frozen=True)
class Region:
    band: int
    cone: int
    tau_lower: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.band, self.cone)


def build_regions(times: Sequence[float], cones: Sequence[Cone]) -> list[Region]:
    return [Region(i + 1, c.index, float(t)) for i, t in enumerate(times) for c in cones]


def classify(mu: MuFunction, cones: Sequence[Cone], times: Sequence[float], X):
    """``(bands, cones)`` arrays; band 0 marks points outside the covered set."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.any(~X.any(axis=1)):
        raise ValueError("the origin belongs to no region")
    return region_bands(mu, times, X), cone_index(cones, X)


def region_index(mu: MuFunction, cones: Sequence[Cone], times: Sequence[float],
                 x) -> tuple[int, int] | None:
    bands, js = classify(mu, cones, times, np.asarray(x, dtype=float)[None])
    if bands[0] == 0:
        return None
    if js[0] == 0:
        raise ValueError(f"point {list(x)} lies in no cone; the covering is incomplete")
    return int(bands[0]), int(js[0])


def region_table_csv(regions: Sequence[Region], cones: Sequence[Cone]) -> str:
    by_index = {c.index: c for c in cones}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "tau_lower", "angle_lo", "angle_hi"])
    for r in regions:
        ang = by_index[r.cone].angles or (math.nan, math.nan)
        w.writerow([r.band, r.cone, repr(r.tau_lower), repr(ang[0]), repr(ang[1])])
    return buf.getvalue()
