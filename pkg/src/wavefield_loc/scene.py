"""Planar propagation scenes and image-method virtual sources.

A scene is a centered rectangle of reflecting wall segments plus axis-aligned
exclusion regions where no user location may be sampled.  Multipath
propagation up to a bounded reflection order is rewritten as a sum over
point sources by mirroring each antenna across ordered wall sequences.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError

# Interior tolerance for parametric segment intersections.  A crossing
# counts as blocking only for parameters strictly inside (eps, 1 - eps),
# so specular contact points and endpoint grazes never self-occlude.
_PARAM_EPS = 1e-9

MAX_REFLECTION_ORDER = 2


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite point {p!r}")
    return a


@dataclass(frozen=True)
class Wall:
    """Thin reflecting segment with a complex per-bounce gain."""

    endpoint_a: tuple[float, float]
    endpoint_b: tuple[float, float]
    reflection_gain: complex = 0.7 * np.exp(1j * np.pi / 4)

    def __post_init__(self):
        a = _as_point(self.endpoint_a)
        b = _as_point(self.endpoint_b)
        object.__setattr__(self, "endpoint_a", (float(a[0]), float(a[1])))
        object.__setattr__(self, "endpoint_b", (float(b[0]), float(b[1])))
        object.__setattr__(self, "reflection_gain", complex(self.reflection_gain))
        if np.hypot(b[0] - a[0], b[1] - a[1]) <= 0.0:
            raise GeometryError("wall endpoints coincide")
        mag = abs(self.reflection_gain)
        if not 0.0 < mag <= 1.0:
            raise GeometryError(f"reflection gain magnitude {mag} outside (0, 1]")

    @property
    def a(self) -> np.ndarray:
        return np.array(self.endpoint_a)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.endpoint_b)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, used for exclusion regions."""

    min_corner: tuple[float, float]
    max_corner: tuple[float, float]

    def __post_init__(self):
        lo = _as_point(self.min_corner)
        hi = _as_point(self.max_corner)
        object.__setattr__(self, "min_corner", (float(lo[0]), float(lo[1])))
        object.__setattr__(self, "max_corner", (float(hi[0]), float(hi[1])))
        if not np.all(hi > lo):
            raise GeometryError("rectangle max corner must exceed min corner")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo, hi = np.array(self.min_corner), np.array(self.max_corner)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    @property
    def area(self) -> float:
        return (self.max_corner[0] - self.min_corner[0]) * (
            self.max_corner[1] - self.min_corner[1]
        )


@dataclass(frozen=True)
class VirtualSource:
    """Image-method point source equivalent of one propagation path."""

    position: tuple[float, float]
    gain: complex
    order: int
    antenna_index: int
    mirror_walls: tuple[int, ...] = ()

    def __post_init__(self):
        p = _as_point(self.position)
        object.__setattr__(self, "position", (float(p[0]), float(p[1])))
        object.__setattr__(self, "gain", complex(self.gain))
        object.__setattr__(self, "mirror_walls", tuple(int(w) for w in self.mirror_walls))
        if self.order != len(self.mirror_walls):
            raise GeometryError("reflection order must match mirror wall count")

    @property
    def pos(self) -> np.ndarray:
        return np.array(self.position)


@dataclass
class Scene:
    """Rectangular location space with reflecting walls and exclusions.

    The location space spans ``[-extent_x/2, extent_x/2] x
    [-extent_y/2, extent_y/2]`` minus the exclusion rectangles.  The base
    station array lives in the same coordinate frame but may sit outside
    the location space.
    """

    extent_x: float
    extent_y: float
    walls: tuple[Wall, ...] = ()
    exclusion_regions: tuple[Rect, ...] = ()
    array: "ArrayConfig | None" = None

    def __post_init__(self):
        self.extent_x = float(self.extent_x)
        self.extent_y = float(self.extent_y)
        self.walls = tuple(self.walls)
        self.exclusion_regions = tuple(self.exclusion_regions)
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise GeometryError("scene extents must be positive")
        hx, hy = self.extent_x / 2, self.extent_y / 2
        for r in self.exclusion_regions:
            lo, hi = r.min_corner, r.max_corner
            if lo[0] < -hx or lo[1] < -hy or hi[0] > hx or hi[1] > hy:
                raise GeometryError("exclusion region outside scene extents")
        if self.feasible_area() <= 0:
            raise GeometryError("location space is empty")
        self._source_cache: dict = {}

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the extent rectangle."""
        return (-self.extent_x / 2, self.extent_x / 2, -self.extent_y / 2, self.extent_y / 2)

    def feasible_area(self) -> float:
        # Exclusions are validated to lie inside the extents; overlapping
        # exclusions are not supported and would double count.
        return self.extent_x * self.extent_y - sum(r.area for r in self.exclusion_regions)

    def in_extents(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        hx, hy = self.extent_x / 2, self.extent_y / 2
        return (np.abs(pts[:, 0]) <= hx) & (np.abs(pts[:, 1]) <= hy)

    def in_location_space(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = self.in_extents(pts)
        for r in self.exclusion_regions:
            ok &= ~r.contains(pts)
        return ok

    def clip_to_extents(self, p: np.ndarray) -> np.ndarray:
        hx, hy = self.extent_x / 2, self.extent_y / 2
        return np.clip(np.asarray(p, dtype=float), [-hx, -hy], [hx, hy])

    def virtual_sources(self, antenna_index: int, max_order: int = MAX_REFLECTION_ORDER):
        """Cached per-antenna image enumeration (visibility is not cached)."""
        key = (antenna_index, max_order)
        if key not in self._source_cache:
            self._source_cache[key] = enumerate_virtual_sources(self, antenna_index, max_order)
        return self._source_cache[key]


def reflect_point(p, wall: Wall) -> np.ndarray:
    """Mirror a point across the infinite line through a wall segment."""
    p = _as_point(p)
    a, b = wall.a, wall.b
    d = b - a
    norm2 = float(d @ d)
    if norm2 <= 0.0:
        raise GeometryError("degenerate wall")
    t = float((p - a) @ d) / norm2
    foot = a + t * d
    return 2.0 * foot - p


def enumerate_virtual_sources(
    scene: Scene, antenna_index: int, max_order: int = MAX_REFLECTION_ORDER
) -> list[VirtualSource]:
    """All images of one antenna across wall sequences of length <= max_order.

    Consecutive repeats of the same wall are excluded (a thin wall cannot
    reflect a ray back onto itself).  Gains multiply along the sequence;
    the order-0 entry is the physical antenna with unit gain.
    """
    if not 0 <= max_order <= MAX_REFLECTION_ORDER:
        raise ValueError(f"max_order must be in [0, {MAX_REFLECTION_ORDER}]")
    if scene.array is None:
        raise GeometryError("scene has no antenna array")
    positions = scene.array.antenna_positions
    if not 0 <= antenna_index < len(positions):
        raise ValueError("antenna index out of range")
    base = np.asarray(positions[antenna_index], dtype=float)

    out = [VirtualSource(tuple(base), 1.0 + 0.0j, 0, antenna_index, ())]
    frontier = [(base, 1.0 + 0.0j, ())]
    for _ in range(max_order):
        nxt = []
        for pos, gain, seq in frontier:
            for wi, wall in enumerate(scene.walls):
                if seq and seq[-1] == wi:
                    continue
                mirrored = reflect_point(pos, wall)
                g = gain * wall.reflection_gain
                new_seq = seq + (wi,)
                out.append(VirtualSource(tuple(mirrored), g, len(new_seq), antenna_index, new_seq))
                nxt.append((mirrored, g, new_seq))
        frontier = nxt
    return out


def _image_chain(scene: Scene, src: VirtualSource) -> list[np.ndarray]:
    """Successive images a^(0) .. a^(order) of the source's antenna."""
    if scene.array is None:
        raise GeometryError("scene has no antenna array")
    pos = np.asarray(scene.array.antenna_positions[src.antenna_index], dtype=float)
    chain = [pos]
    for wi in src.mirror_walls:
        pos = reflect_point(pos, scene.walls[wi])
        chain.append(pos)
    return chain


def _segment_params(p0, p1, a, b):
    """Vectorised segment/segment intersection parameters.

    p0, p1: (..., 2) segment endpoints; a, b: (2,) wall endpoints.
    Returns (t, u, ok) where the crossing is p0 + t (p1 - p0) = a + u (b - a)
    and ok flags non-parallel configurations.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    u_dir = p1 - p0
    v_dir = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    w = np.asarray(a, dtype=float) - p0
    denom = u_dir[..., 0] * v_dir[1] - u_dir[..., 1] * v_dir[0]
    scale = np.hypot(u_dir[..., 0], u_dir[..., 1]) * np.hypot(v_dir[0], v_dir[1])
    ok = np.abs(denom) > 1e-14 * np.maximum(scale, 1e-300)
    safe = np.where(ok, denom, 1.0)
    t = (w[..., 0] * v_dir[1] - w[..., 1] * v_dir[0]) / safe
    u = (w[..., 0] * u_dir[..., 1] - w[..., 1] * u_dir[..., 0]) / safe
    return t, u, ok


def _leg_blocked(p0, p1, scene: Scene) -> np.ndarray:
    """True where the open segment p0 -> p1 crosses any wall interior."""
    p0 = np.asarray(p0, dtype=float)
    blocked = np.zeros(p0.shape[:-1], dtype=bool)
    for wall in scene.walls:
        t, u, ok = _segment_params(p0, p1, wall.a, wall.b)
        hit = (
            ok
            & (t > _PARAM_EPS)
            & (t < 1.0 - _PARAM_EPS)
            & (u > _PARAM_EPS)
            & (u < 1.0 - _PARAM_EPS)
        )
        blocked |= hit
    return blocked


def visibility_mask(scene: Scene, src: VirtualSource, x: np.ndarray) -> np.ndarray:
    """Image-method validity of ``src`` for a batch of receiver points.

    The unfolded ray from x to the source image must meet every mirror wall
    segment in reverse order, and no wall may cross any physical
    sub-segment.  Order-0 sources reduce to a line-of-sight test.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    valid = np.ones(len(pts), dtype=bool)
    chain = _image_chain(scene, src)
    q = pts
    for i in range(src.order, 0, -1):
        wall = scene.walls[src.mirror_walls[i - 1]]
        target = np.broadcast_to(chain[i], q.shape)
        t, u, ok = _segment_params(q, target, wall.a, wall.b)
        spec_ok = ok & (t > _PARAM_EPS) & (t < 1.0 - _PARAM_EPS)
        spec_ok &= (u >= -_PARAM_EPS) & (u <= 1.0 + _PARAM_EPS)
        valid &= spec_ok
        spec_pt = q + t[..., None] * (target - q)
        valid &= ~_leg_blocked(q, spec_pt, scene)
        q = np.where(valid[:, None], spec_pt, q)
    final = np.broadcast_to(chain[0], q.shape)
    valid &= ~_leg_blocked(q, final, scene)
    return valid


def path_visible(x, src: VirtualSource, scene: Scene) -> bool:
    """True iff the multipath leg represented by ``src`` reaches ``x``."""
    return bool(visibility_mask(scene, src, _as_point(x))[0])


def visible_sources(
    scene: Scene, x, max_order: int = MAX_REFLECTION_ORDER
) -> list[list[VirtualSource]]:
    """Per-antenna lists of sources whose paths reach ``x``."""
    x = _as_point(x)
    if scene.array is None:
        raise GeometryError("scene has no antenna array")
    n_antennas = len(scene.array.antenna_positions)
    if not scene.walls:
        return [list(scene.virtual_sources(j, max_order)) for j in range(n_antennas)]
    out = []
    for j in range(n_antennas):
        srcs = scene.virtual_sources(j, max_order)
        out.append([s for s in srcs if path_visible(x, s, scene)])
    return out


# ---------------------------------------------------------------------------
# JSON scene description
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene, freqs=None) -> dict:
    doc = {
        "extent": [scene.extent_x, scene.extent_y],
        "walls": [
            {
                "a": list(w.endpoint_a),
                "b": list(w.endpoint_b),
                "gain": [w.reflection_gain.real, w.reflection_gain.imag],
            }
            for w in scene.walls
        ],
        "exclusions": [
            {"min": list(r.min_corner), "max": list(r.max_corner)}
            for r in scene.exclusion_regions
        ],
    }
    if scene.array is not None:
        doc["array"] = scene.array.to_dict()
    if freqs is not None:
        doc["frequencies"] = freqs.to_dict()
    return doc


def scene_from_dict(doc: dict):
    """Build (Scene, FreqGrid | None) from the JSON scene schema."""
    from .channel import ArrayConfig, FreqGrid

    walls = tuple(
        Wall(tuple(w["a"]), tuple(w["b"]), complex(w["gain"][0], w["gain"][1]))
        for w in doc.get("walls", [])
    )
    exclusions = tuple(
        Rect(tuple(r["min"]), tuple(r["max"])) for r in doc.get("exclusions", [])
    )
    array = ArrayConfig.from_dict(doc["array"]) if "array" in doc else None
    scene = Scene(doc["extent"][0], doc["extent"][1], walls, exclusions, array)
    freqs = FreqGrid.from_dict(doc["frequencies"]) if "frequencies" in doc else None
    return scene, freqs


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: Scene, path, freqs=None):
    Path(path).write_text(json.dumps(scene_to_dict(scene, freqs), indent=2) + "\n")
