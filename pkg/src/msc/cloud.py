"""Point cloud payload type and synthetic room scenes.

A :class:`PointCloud` is immutable after construction (arrays are marked
read-only) so clouds can be shared freely across threads; every operator
returns a new cloud. ``origin_index`` tracks which point of the ancestor
cloud each point descends from, which is what view matching and patch
partitioning key on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import Rng

log = logging.getLogger(__name__)

NORMAL_UNIT_TOL = 1e-6


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Positions (meters), colors in [0,1], optional unit normals.

    ``origin_index[i]`` is the index of point i in the cloud it was sampled
    from; a freshly created cloud uses 0..n-1. Values are distinct within
    one cloud.
    """

    positions: np.ndarray  # (n, 3) float64
    colors: np.ndarray  # (n, 3) float64 in [0, 1]
    normals: np.ndarray | None = None  # (n, 3) float64 unit, or None
    origin_index: np.ndarray = None  # (n,) int64

    def __post_init__(self):
        pos = _ro(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        col = _ro(np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
        nrm = self.normals
        if nrm is not None:
            nrm = _ro(np.asarray(nrm, dtype=np.float64).reshape(-1, 3))
        oi = self.origin_index
        if oi is None:
            oi = np.arange(pos.shape[0], dtype=np.int64)
        oi = _ro(np.asarray(oi, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "origin_index", oi)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> "PointCloud":
        """Check the type invariants; raises DataError on violation."""
        n = self.n
        if self.colors.shape[0] != n or self.origin_index.shape[0] != n:
            raise DataError("field lengths disagree")
        if not np.all(np.isfinite(self.positions)):
            raise DataError("non-finite positions")
        if self.colors.size and (self.colors.min() < 0.0 or self.colors.max() > 1.0):
            raise DataError("colors outside [0, 1]")
        if self.normals is not None:
            if self.normals.shape[0] != n:
                raise DataError("field lengths disagree")
            nn = np.sqrt(np.sum(self.normals * self.normals, axis=1))
            if nn.size and np.max(np.abs(nn - 1.0)) > NORMAL_UNIT_TOL:
                raise DataError("normals not unit length")
        if np.unique(self.origin_index).size != n:
            raise DataError("origin_index values not distinct")
        return self

    def take(self, idx: np.ndarray) -> "PointCloud":
        """Subset/reorder by point index, keeping provenance."""
        return PointCloud(
            positions=self.positions[idx],
            colors=self.colors[idx],
            normals=None if self.normals is None else self.normals[idx],
            origin_index=self.origin_index[idx],
        )

    def with_fields(self, **kw) -> "PointCloud":
        base = dict(
            positions=self.positions,
            colors=self.colors,
            normals=self.normals,
            origin_index=self.origin_index,
        )
        base.update(kw)
        return PointCloud(**base)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic room: shell plus boxes and spheres."""

    extent: tuple[float, float, float] = (3.0, 3.0, 2.2)  # meters
    boxes: int = 2
    spheres: int = 2
    density: float = 60.0  # points per square meter
    color_scheme: int = 0

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise DataError("scene extent must be positive")
        if self.density <= 0:
            raise DataError("scene density must be positive")
        if self.boxes < 0 or self.spheres < 0:
            raise DataError("primitive counts must be >= 0")


# base palettes; picked per primitive, cycled by index
_PALETTES = [
    [(0.82, 0.78, 0.72), (0.55, 0.60, 0.70), (0.70, 0.45, 0.40),
     (0.45, 0.65, 0.50), (0.75, 0.70, 0.40), (0.50, 0.45, 0.65)],
    [(0.90, 0.88, 0.84), (0.30, 0.45, 0.60), (0.60, 0.30, 0.30),
     (0.35, 0.55, 0.35), (0.65, 0.55, 0.25), (0.40, 0.35, 0.55)],
]


def _paint(base: tuple[float, float, float], pos: np.ndarray, extent) -> np.ndarray:
    """Per-primitive base color with a smooth positional gradient.

    Each channel follows a different spatial direction so surface texture
    carries point identity (not just a single iso-contour family).
    """
    u = pos[:, 0] / extent[0]
    v = pos[:, 1] / extent[1]
    w = pos[:, 2] / extent[2]
    grad = np.stack([u, v, w], axis=1)
    c = np.asarray(base)[None, :] * (0.55 + 0.45 * grad)
    return np.clip(c, 0.0, 1.0)


def _sample_rect(origin, u_vec, v_vec, normal, density, rng: Rng):
    """Uniform samples on a rectangle patch; constant analytic normal."""
    u_vec = np.asarray(u_vec, dtype=np.float64)
    v_vec = np.asarray(v_vec, dtype=np.float64)
    area = np.linalg.norm(np.cross(u_vec, v_vec))
    count = int(round(area * density))
    if count == 0:
        return None
    u = rng.random(count)[:, None]
    v = rng.random(count)[:, None]
    pos = np.asarray(origin)[None, :] + u * u_vec[None, :] + v * v_vec[None, :]
    nrm = np.tile(np.asarray(normal, dtype=np.float64), (count, 1))
    return pos, nrm


def synth_scene(spec: SceneSpec, rng: Rng) -> PointCloud:
    """Generate a room shell (floor + 4 walls) with boxes and spheres.

    Points are sampled at ``spec.density`` per square meter of surface with
    analytic normals oriented into the room interior (outward from object
    surfaces). Primitives that would receive zero points at the requested
    density are omitted with a warning.
    """
    ex, ey, ez = spec.extent
    palette = _PALETTES[spec.color_scheme % len(_PALETTES)]
    parts_pos, parts_nrm, parts_col = [], [], []

    def add(sampled, base):
        if sampled is None:
            return False
        pos, nrm = sampled
        parts_pos.append(pos)
        parts_nrm.append(nrm)
        parts_col.append(_paint(base, pos, spec.extent))
        return True

    # room shell: floor + 4 walls, normals into the interior; every face has
    # its own base color so opposite walls stay distinguishable under jitter
    shell = [
        ((0, 0, 0), (ex, 0, 0), (0, ey, 0), (0, 0, 1)),  # floor
        ((0, 0, 0), (ex, 0, 0), (0, 0, ez), (0, 1, 0)),  # wall y=0
        ((0, ey, 0), (ex, 0, 0), (0, 0, ez), (0, -1, 0)),  # wall y=ey
        ((0, 0, 0), (0, ey, 0), (0, 0, ez), (1, 0, 0)),  # wall x=0
        ((ex, 0, 0), (0, ey, 0), (0, 0, ez), (-1, 0, 0)),  # wall x=ex
    ]
    for i, (origin, u_vec, v_vec, normal) in enumerate(shell):
        base = palette[i % len(palette)]
        if not add(_sample_rect(origin, u_vec, v_vec, normal, spec.density, rng), base):
            log.warning("shell face %d received 0 points; omitted", i)

    # boxes resting on the floor; face normals point outward
    max_span = min(ex, ey)
    for b in range(spec.boxes):
        size = rng.uniform(0.25, 0.6, 3) * np.array([max_span, max_span, 0.8 * ez])
        cx = rng.uniform(size[0] / 2 + 0.05 * ex, ex - size[0] / 2 - 0.05 * ex)
        cy = rng.uniform(size[1] / 2 + 0.05 * ey, ey - size[1] / 2 - 0.05 * ey)
        lo = np.array([cx - size[0] / 2, cy - size[1] / 2, 0.0])
        sx, sy, sz = size
        faces = [
            ((lo[0], lo[1], sz), (sx, 0, 0), (0, sy, 0), (0, 0, 1)),  # top
            ((lo[0], lo[1], 0), (sx, 0, 0), (0, 0, sz), (0, -1, 0)),
            ((lo[0], lo[1] + sy, 0), (sx, 0, 0), (0, 0, sz), (0, 1, 0)),
            ((lo[0], lo[1], 0), (0, sy, 0), (0, 0, sz), (-1, 0, 0)),
            ((lo[0] + sx, lo[1], 0), (0, sy, 0), (0, 0, sz), (1, 0, 0)),
        ]
        base = palette[1 + b % (len(palette) - 1)]
        got = False
        for origin, u_vec, v_vec, normal in faces:
            origin = (origin[0], origin[1], origin[2] + lo[2])
            got |= add(_sample_rect(origin, u_vec, v_vec, normal, spec.density, rng), base)
        if not got:
            log.warning("box %d received 0 points; omitted", b)

    # spheres floating in the room; radial normals
    for s in range(spec.spheres):
        radius = rng.uniform(0.12, 0.3) * min(ex, ey, ez)
        center = np.array(
            [
                rng.uniform(radius + 0.02 * ex, ex - radius - 0.02 * ex),
                rng.uniform(radius + 0.02 * ey, ey - radius - 0.02 * ey),
                rng.uniform(radius + 0.02 * ez, ez - radius - 0.02 * ez),
            ]
        )
        area = 4.0 * np.pi * radius * radius
        count = int(round(area * spec.density))
        if count == 0:
            log.warning("sphere %d received 0 points; omitted", s)
            continue
        d = rng.normal(0.0, 1.0, (count, 3))
        d /= np.sqrt(np.sum(d * d, axis=1))[:, None]
        pos = center[None, :] + radius * d
        base = palette[1 + (spec.boxes + s) % (len(palette) - 1)]
        add((pos, d), base)

    if not parts_pos:
        return PointCloud(
            positions=np.empty((0, 3)), colors=np.empty((0, 3)), normals=np.empty((0, 3))
        )
    pos = np.concatenate(parts_pos)
    nrm = np.concatenate(parts_nrm)
    col = np.concatenate(parts_col)
    # renormalize: tile() and arithmetic keep these unit up to rounding
    nrm = nrm / np.sqrt(np.sum(nrm * nrm, axis=1))[:, None]
    return PointCloud(positions=pos, colors=col, normals=nrm)
