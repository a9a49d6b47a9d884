"""Planar/ball regions, point-to-set distances, and safety geometry.

Distances use closed forms for disks and balls; unions take pointwise
minima over members, complements mirror the sign.  All point arguments are
arrays of shape ``(..., n)`` and results drop the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .errors import UnsupportedShapeError

__all__ = [
    "Region",
    "disk",
    "ball",
    "disk_union",
    "ball_complement",
    "distance_to_set",
    "contains",
    "SafetyGeometry",
    "boundary_extremes",
]


@dataclass(frozen=True)
class Region:
    """A region of R^n: one ball, a finite union of balls, or a ball
    complement.  ``open_set`` controls membership on the boundary only."""

    kind: str  # "ball" | "union" | "complement"
    centers: np.ndarray  # (k, n)
    radii: np.ndarray  # (k,)
    open_set: bool = True

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from points (..., n) to the region (0 inside)."""
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != self.dim:
            raise UnsupportedShapeError(
                f"points have dimension {p.shape[-1]}, region is {self.dim}-d"
            )
        # (..., k): distance from each point to each member's center
        sep = np.linalg.norm(p[..., None, :] - self.centers, axis=-1)
        if self.kind == "complement":
            d = self.radii[..., 0] - sep[..., 0]
        else:
            d = np.min(sep - self.radii, axis=-1)
        return np.maximum(d, 0.0)

    def signed_boundary_distance(self, points) -> np.ndarray:
        """Negative inside, positive outside, zero on the boundary."""
        p = np.asarray(points, dtype=float)
        sep = np.linalg.norm(p[..., None, :] - self.centers, axis=-1)
        if self.kind == "complement":
            return self.radii[..., 0] - sep[..., 0]
        return np.min(sep - self.radii, axis=-1)

    def contains(self, points) -> np.ndarray:
        """Boolean membership; strict inequality when the set is open."""
        s = self.signed_boundary_distance(points)
        return (s < 0.0) if self.open_set else (s <= 0.0)

    def closure_contains(self, points) -> np.ndarray:
        return self.signed_boundary_distance(points) <= 0.0

    def boundary_points(self, n_per_piece: int = 4096, seed: int = 0) -> np.ndarray:
        """Sample the boundary: uniform angles for disks, seeded unit
        directions for higher-dimensional spheres.  Union boundaries drop
        samples swallowed by another member."""
        pieces = []
        for c, r in zip(self.centers, self.radii):
            if self.dim == 2:
                th = np.linspace(0.0, 2.0 * np.pi, n_per_piece, endpoint=False)
                pts = c + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
            else:
                rng = np.random.default_rng(seed)
                dirs = rng.standard_normal((n_per_piece, self.dim))
                dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
                pts = c + r * dirs
            pieces.append(pts)
        if self.kind == "union" and len(pieces) > 1:
            kept = []
            for i, pts in enumerate(pieces):
                inside_other = np.zeros(len(pts), dtype=bool)
                for j, (c, r) in enumerate(zip(self.centers, self.radii)):
                    if j == i:
                        continue
                    inside_other |= (
                        np.linalg.norm(pts - c, axis=-1) < r - 1e-12
                    )
                kept.append(pts[~inside_other])
            return np.concatenate(kept, axis=0)
        return np.concatenate(pieces, axis=0)

    def describe(self) -> str:
        kinds = {"ball": "ball", "union": "union of balls",
                 "complement": "ball complement"}
        bits = ", ".join(
            f"c=({', '.join(f'{float(x):g}' for x in c)}) r={r:g}"
            for c, r in zip(self.centers, self.radii)
        )
        openness = "open" if self.open_set else "closed"
        return f"{openness} {kinds[self.kind]} [{bits}]"


def disk(center, radius: float, open_set: bool = True) -> Region:
    """An open (default) disk in the plane."""
    c = np.atleast_2d(np.asarray(center, dtype=float))
    if c.shape != (1, 2):
        raise UnsupportedShapeError(f"disk center must be 2-d, got {center!r}")
    if radius <= 0:
        raise UnsupportedShapeError(f"disk radius must be positive, got {radius}")
    return Region("ball", c, np.asarray([float(radius)]), open_set)


def ball(center, radius: float, open_set: bool = True) -> Region:
    """An open (default) ball in R^n."""
    c = np.atleast_2d(np.asarray(center, dtype=float))
    if radius <= 0:
        raise UnsupportedShapeError(f"ball radius must be positive, got {radius}")
    return Region("ball", c, np.asarray([float(radius)]), open_set)


def disk_union(members: Sequence[Region]) -> Region:
    """Union of balls of equal dimension (open iff every member is open)."""
    if not members:
        raise UnsupportedShapeError("disk_union() needs at least one member")
    dims = {m.dim for m in members}
    if len(dims) != 1:
        raise UnsupportedShapeError(f"mixed dimensions in union: {sorted(dims)}")
    if any(m.kind != "ball" for m in members):
        raise UnsupportedShapeError("disk_union() members must be balls")
    centers = np.concatenate([m.centers for m in members], axis=0)
    radii = np.concatenate([m.radii for m in members], axis=0)
    open_set = all(m.open_set for m in members)
    return Region("union", centers, radii, open_set)


def ball_complement(center, radius: float, open_set: bool = True) -> Region:
    """The set of points strictly outside (default) a ball."""
    c = np.atleast_2d(np.asarray(center, dtype=float))
    if radius <= 0:
        raise UnsupportedShapeError(f"radius must be positive, got {radius}")
    return Region("complement", c, np.asarray([float(radius)]), open_set)


def distance_to_set(points, region: Region) -> np.ndarray:
    return region.distance(points)


def contains(points, region: Region) -> np.ndarray:
    return region.contains(points)


@dataclass(frozen=True)
class SafetyGeometry:
    """An unsafe set D compactly contained in a bounded working window X.

    ``kappa`` is the clearance min over the outer boundary of the distance to
    D; ``d2`` is the largest norm attained on the closure of D.  Both have
    closed forms for ball/ball geometry and fall back to boundary sampling
    otherwise.
    """

    unsafe: Region
    window: Region
    label: str = ""
    _samples: int = field(default=4096, repr=False)

    def __post_init__(self):
        if self.unsafe.dim != self.window.dim:
            raise UnsupportedShapeError(
                f"unsafe set is {self.unsafe.dim}-d but window is "
                f"{self.window.dim}-d"
            )
        if self.window.kind != "ball":
            raise UnsupportedShapeError(
                "working window must be a single ball"
            )
        if self.kappa() <= 0:
            raise UnsupportedShapeError(
                "unsafe set is not compactly contained in the window "
                f"(clearance {self.kappa():.6g} <= 0)"
            )

    @property
    def dim(self) -> int:
        return self.window.dim

    def kappa(self) -> float:
        """min over the window boundary of the distance to the unsafe set."""
        cx = self.window.centers[0]
        rx = float(self.window.radii[0])
        if self.unsafe.kind in ("ball", "union"):
            # exact for each member: min over boundary of |xi - c_D| - r_D
            # is (rx - |cx - c_D|) - r_D when the member sits inside.
            vals = []
            for c, r in zip(self.unsafe.centers, self.unsafe.radii):
                vals.append(rx - float(np.linalg.norm(cx - c)) - float(r))
            return min(vals)
        pts = self.window.boundary_points(self._samples)
        return float(np.min(self.unsafe.distance(pts)))

    def d2(self) -> float:
        """max norm over the closure of the unsafe set."""
        if self.unsafe.kind in ("ball", "union"):
            vals = [
                float(np.linalg.norm(c)) + float(r)
                for c, r in zip(self.unsafe.centers, self.unsafe.radii)
            ]
            return max(vals)
        pts = self.unsafe.boundary_points(self._samples)
        return float(np.max(np.linalg.norm(pts, axis=-1)))

    def annulus_mask(self, points) -> np.ndarray:
        """Points in the closed window but outside the open unsafe set."""
        p = np.asarray(points, dtype=float)
        return self.window.closure_contains(p) & ~self.unsafe.contains(p)

    def shrink_window(self, radius: float) -> "SafetyGeometry":
        """Same unsafe set inside a smaller concentric window."""
        cx = self.window.centers[0]
        return SafetyGeometry(
            unsafe=self.unsafe,
            window=ball(cx, radius, open_set=self.window.open_set),
            label=f"{self.label}|r={radius:g}" if self.label else f"r={radius:g}",
        )


def boundary_extremes(geom: SafetyGeometry) -> Tuple[float, float]:
    """Return ``(kappa, d2)`` for a safety geometry."""
    return geom.kappa(), geom.d2()
