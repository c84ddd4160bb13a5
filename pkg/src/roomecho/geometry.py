"""Rooms, materials, placement sampling, and panorama-based geometric maps.

Conventions fixed here and used everywhere else:

* World frame: z up, floor at z = 0. Rooms are vertical extrusions of a
  2D footprint (shoeboxes are the axis-aligned special case).
* Panorama: 256 x 512 equirectangular grid, row-major, top row at highest
  elevation, center column looking along +x (azimuth 0).
* Receivers have no heading; camera frames are translations of the world
  frame (identity rotation).
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    InvalidGeometryError,
    InvalidViewpointError,
    PlacementInfeasibleError,
)

PANO_H = 256
PANO_W = 512

MIN_EXTENT = 1.2           # smallest usable room dimension, meters
SURFACE_CLEARANCE = 0.5    # source/receiver distance to any surface
SOURCE_SPACING = 1.0       # source-to-source minimum distance
SOURCE_RECEIVER_GAP = 1.0  # source-to-receiver minimum distance
HEIGHT_RANGE = (0.5, 2.5)  # allowed heights above the floor
PLACEMENT_ATTEMPTS = 10_000
PLANARITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    """A surface finish with a broadband energy-absorption coefficient."""

    id: str
    category: str
    absorption: float  # alpha in (0, 1]

    def __post_init__(self):
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError(f"absorption must be in (0, 1], got {self.absorption}")


def _build_material_library() -> tuple[Material, ...]:
    # 11 categories x 4 variants; alphas chosen to span hard to soft finishes.
    spec = {
        "brick": (0.04, 0.05, 0.07, 0.09),
        "concrete": (0.04, 0.06, 0.08, 0.12),
        "glass": (0.05, 0.08, 0.10, 0.15),
        "metal": (0.05, 0.07, 0.11, 0.14),
        "plaster": (0.06, 0.09, 0.13, 0.18),
        "gypsum": (0.08, 0.11, 0.15, 0.22),
        "wood": (0.09, 0.14, 0.20, 0.28),
        "fabric_panel": (0.25, 0.35, 0.45, 0.60),
        "carpet": (0.20, 0.30, 0.45, 0.55),
        "curtain": (0.30, 0.40, 0.55, 0.70),
        "acoustic_tile": (0.50, 0.65, 0.80, 0.95),
        "anechoic": (0.97, 0.98, 0.99, 1.00),
    }
    mats = []
    for cat, alphas in spec.items():
        for i, a in enumerate(alphas):
            mats.append(Material(id=f"{cat}_{i}", category=cat, absorption=a))
    return tuple(mats)


MATERIAL_LIBRARY: tuple[Material, ...] = _build_material_library()
_MATERIALS_BY_ID = {m.id: m for m in MATERIAL_LIBRARY}


def material_by_id(material_id: str) -> Material:
    try:
        return _MATERIALS_BY_ID[material_id]
    except KeyError:
        raise KeyError(f"unknown material id: {material_id!r}") from None


def material_categories() -> tuple[str, ...]:
    seen = dict.fromkeys(m.category for m in MATERIAL_LIBRARY)
    return tuple(seen)


# ---------------------------------------------------------------------------
# Rooms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Room:
    """Planar-surface room: polygons, per-surface materials, and metadata.

    ``surfaces`` are (n, 3) vertex arrays. Normals stored in ``normals``
    point into the room; ``offsets`` are the plane constants so that
    interior points satisfy ``normals[s] @ p > offsets[s]``.
    """

    id: str
    kind: str                      # "shoebox" | "extrusion"
    surfaces: tuple[np.ndarray, ...]
    material_ids: tuple[str, ...]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    footprint: np.ndarray          # (m, 2) CCW polygon at z=0
    height: float
    volume: float
    normals: np.ndarray = field(repr=False, default=None)   # (S, 3) inward
    offsets: np.ndarray = field(repr=False, default=None)   # (S,)
    areas: np.ndarray = field(repr=False, default=None)     # (S,)

    @property
    def n_surfaces(self) -> int:
        return len(self.surfaces)

    def absorptions(self) -> np.ndarray:
        return np.array([material_by_id(m).absorption for m in self.material_ids])

    def interior_point(self) -> np.ndarray:
        c = np.array([*_polygon_centroid_2d(self.footprint), self.height / 2.0])
        if not self.contains(c):
            # centroid can fall outside a non-convex footprint; probe the grid
            for fx in np.linspace(0.15, 0.85, 15):
                for fy in np.linspace(0.15, 0.85, 15):
                    p = self.bbox_min + (self.bbox_max - self.bbox_min) * [fx, fy, 0.5]
                    if self.contains(p):
                        return p
            raise InvalidGeometryError(f"room {self.id}: no interior point found")
        return c

    def contains(self, p) -> bool:
        """Strict interior test."""
        p = np.asarray(p, dtype=float)
        if not (0.0 < p[2] < self.height):
            return False
        return bool(_points_in_polygon_2d(p[None, :2], self.footprint)[0])

    def surface_distance(self, p) -> np.ndarray:
        """Distance from p to each surface polygon."""
        p = np.asarray(p, dtype=float)
        return np.array([_point_polygon_distance(p, s) for s in self.surfaces])


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _polygon_normal(verts: np.ndarray) -> np.ndarray:
    # Newell's method: robust for any simple planar polygon.
    v = np.asarray(verts, dtype=float)
    nxt = np.roll(v, -1, axis=0)
    n = np.array([
        np.sum((v[:, 1] - nxt[:, 1]) * (v[:, 2] + nxt[:, 2])),
        np.sum((v[:, 2] - nxt[:, 2]) * (v[:, 0] + nxt[:, 0])),
        np.sum((v[:, 0] - nxt[:, 0]) * (v[:, 1] + nxt[:, 1])),
    ])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise InvalidGeometryError("degenerate surface polygon")
    return n / norm


def _check_planar(verts: np.ndarray, normal: np.ndarray) -> float:
    d = verts @ normal
    if np.ptp(d) > PLANARITY_TOL:
        raise InvalidGeometryError("surface polygon is not planar")
    return float(np.mean(d))


def _polygon_area(verts: np.ndarray, normal: np.ndarray) -> float:
    v = np.asarray(verts, dtype=float)
    cross = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
    return abs(float(cross @ normal)) / 2.0


def _polygon_centroid_2d(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def _signed_area_2d(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return float((x * np.roll(y, -1) - np.roll(x, -1) * y).sum() / 2.0)


def _points_in_polygon_2d(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number test, vectorized over points. Works for any simple polygon."""
    px, py = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = ax + (py - ay) * (bx - ax) / (by - ay)
        hit = crosses & (px < xi)
        inside ^= hit
    return inside


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _footprint_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue  # adjacent edges share a vertex
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_intersect(a, b, c, d):
                return False
    return True


def _point_polygon_distance(p: np.ndarray, verts: np.ndarray) -> float:
    normal = _polygon_normal(verts)
    offset = float(np.mean(verts @ normal))
    plane_dist = float(p @ normal - offset)
    proj = p - plane_dist * normal
    ax = int(np.argmax(np.abs(normal)))
    keep = [i for i in range(3) if i != ax]
    poly2 = verts[:, keep]
    if _points_in_polygon_2d(proj[None, keep], poly2)[0]:
        return abs(plane_dist)
    # distance to the nearest boundary segment in 3D
    best = np.inf
    n = len(verts)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        ab = b - a
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def _assemble_room(room_id, kind, surfaces, material_ids, footprint, height) -> Room:
    if len(material_ids) != len(surfaces):
        raise InvalidGeometryError(
            f"need one material per surface: {len(material_ids)} ids for "
            f"{len(surfaces)} surfaces"
        )
    if len(surfaces) != len(footprint) + 2:
        raise InvalidGeometryError(
            "expected one wall per footprint edge plus floor and ceiling"
        )
    for m in material_ids:
        material_by_id(m)
    # Inward normals from the CCW footprint (probe points fail for
    # non-convex rooms where the interior straddles a wall plane).
    n_walls = len(footprint)
    hints = []
    for i in range(n_walls):
        dx, dy = footprint[(i + 1) % n_walls] - footprint[i]
        hints.append(np.array([-dy, dx, 0.0]) / np.hypot(dx, dy))
    hints.append(np.array([0.0, 0.0, 1.0]))    # floor
    hints.append(np.array([0.0, 0.0, -1.0]))   # ceiling
    normals, offsets, areas = [], [], []
    flux = np.zeros(3)
    for verts, hint in zip(surfaces, hints):
        if len(verts) < 3:
            raise InvalidGeometryError("surface needs at least 3 vertices")
        n = _polygon_normal(verts)
        if n @ hint < 0:
            n = -n
        if n @ hint < 0.999:
            raise InvalidGeometryError("surface orientation disagrees with footprint")
        off = _check_planar(verts, n)
        a = _polygon_area(verts, n)
        normals.append(n)
        offsets.append(off)
        areas.append(a)
        flux += a * n
    if np.linalg.norm(flux) > 1e-6:
        raise InvalidGeometryError("surface set is not watertight")
    verts_all = np.vstack(surfaces)
    volume = abs(_signed_area_2d(footprint)) * height
    room = Room(
        id=room_id,
        kind=kind,
        surfaces=tuple(_freeze(s) for s in surfaces),
        material_ids=tuple(material_ids),
        bbox_min=_freeze(verts_all.min(axis=0)),
        bbox_max=_freeze(verts_all.max(axis=0)),
        footprint=_freeze(footprint),
        height=float(height),
        volume=float(volume),
        normals=_freeze(np.array(normals)),
        offsets=_freeze(np.array(offsets)),
        areas=_freeze(np.array(areas)),
    )
    if not room.contains(room.interior_point()):
        raise InvalidGeometryError("room encloses no interior point")
    return room


def make_shoebox(dims, materials, room_id: str = "shoebox") -> Room:
    """Axis-aligned box with its floor corner at the origin.

    ``materials`` order: x=0 wall, x=Lx wall, y=0 wall, y=Ly wall,
    floor, ceiling.
    """
    import dataclasses

    lx, ly, lz = (float(d) for d in dims)
    if min(lx, ly, lz) <= MIN_EXTENT:
        raise InvalidGeometryError(
            f"every extent must exceed {MIN_EXTENT} m, got {(lx, ly, lz)}"
        )
    if len(materials) != 6:
        raise InvalidGeometryError("shoebox needs exactly 6 material ids")
    footprint = [(0, 0), (lx, 0), (lx, ly), (0, ly)]
    # footprint edges run y=0, x=lx, y=ly, x=0
    edge_mats = [materials[2], materials[1], materials[3], materials[0],
                 materials[4], materials[5]]
    room = make_polygonal_room(footprint, lz, edge_mats, room_id)
    return dataclasses.replace(room, kind="shoebox")


def make_polygonal_room(footprint, height, materials, room_id: str = "polygonal") -> Room:
    """Vertical extrusion of a simple 2D footprint.

    Surfaces are one wall per footprint edge (in order) followed by floor
    and ceiling; ``materials`` must match that ordering (n_edges + 2 ids).
    """
    fp = np.asarray(footprint, dtype=float)
    if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
        raise InvalidGeometryError("footprint must be an (n, 2) polygon with n >= 3")
    if float(height) <= MIN_EXTENT:
        raise InvalidGeometryError(f"height must exceed {MIN_EXTENT} m")
    if not _footprint_is_simple(fp):
        raise InvalidGeometryError("footprint is self-intersecting")
    n = len(fp)
    if len(materials) != n + 2:
        raise InvalidGeometryError(
            f"extrusion needs {n + 2} material ids (walls, floor, ceiling)"
        )
    materials = list(materials)
    if _signed_area_2d(fp) < 0:
        # normalize to CCW, keeping wall materials attached to their edges
        fp = fp[::-1].copy()
        walls = [materials[(n - 2 - j) % n] for j in range(n)]
        materials = walls + materials[n:]
    h = float(height)
    surfaces = []
    for i in range(n):
        (x0, y0), (x1, y1) = fp[i], fp[(i + 1) % n]
        surfaces.append(np.array(
            [(x0, y0, 0), (x1, y1, 0), (x1, y1, h), (x0, y0, h)], dtype=float))
    floor = np.column_stack([fp, np.zeros(n)])
    ceiling = np.column_stack([fp, np.full(n, h)])
    surfaces.append(floor)
    surfaces.append(ceiling)
    return _assemble_room(room_id, "extrusion", surfaces, list(materials), fp, h)


# ---------------------------------------------------------------------------
# Placement sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Sampled source/receiver positions plus designated reference sources."""

    sources: np.ndarray                 # (n_src, 3)
    receivers: np.ndarray               # (n_rcv, 3)
    reference_source_indices: tuple[int, ...]


def farthest_point_indices(points: np.ndarray, k: int, start: int = 0) -> tuple[int, ...]:
    """Greedy farthest-point subset: spreads k picks evenly over the points."""
    n = len(points)
    k = min(k, n)
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return tuple(sorted(chosen))


def _placement_ok(room: Room, p: np.ndarray) -> bool:
    if not room.contains(p):
        return False
    if not HEIGHT_RANGE[0] <= p[2] <= HEIGHT_RANGE[1]:
        return False
    return bool(np.all(room.surface_distance(p) >= SURFACE_CLEARANCE))


def sample_placements(room: Room, n_src: int, n_rcv: int, seed: int,
                      n_ref: int | None = None) -> Placement:
    """Rejection-sample valid positions; deterministic in ``seed``.

    Sources first (pairwise >= 1.0 m apart), then receivers (>= 1.0 m from
    every source). Raises PlacementInfeasibleError once any point burns
    through the attempt budget.
    """
    if n_src < 1 or n_rcv < 1:
        raise ValueError("need at least one source and one receiver")
    rng = np.random.default_rng(seed)
    lo, hi = room.bbox_min, room.bbox_max
    z_lo = max(HEIGHT_RANGE[0], float(lo[2]))
    z_hi = min(HEIGHT_RANGE[1], float(hi[2]))

    def draw() -> np.ndarray:
        p = lo + rng.random(3) * (hi - lo)
        p[2] = z_lo + rng.random() * (z_hi - z_lo)
        return p

    def sample_point(accept) -> np.ndarray:
        for _ in range(PLACEMENT_ATTEMPTS):
            p = draw()
            if accept(p):
                return p
        raise PlacementInfeasibleError(
            f"room {room.id}: no valid position in {PLACEMENT_ATTEMPTS} attempts"
        )

    sources: list[np.ndarray] = []
    for _ in range(n_src):
        sources.append(sample_point(lambda p: _placement_ok(room, p) and all(
            np.linalg.norm(p - s) >= SOURCE_SPACING for s in sources)))
    receivers: list[np.ndarray] = []
    for _ in range(n_rcv):
        receivers.append(sample_point(lambda p: _placement_ok(room, p) and all(
            np.linalg.norm(p - s) >= SOURCE_RECEIVER_GAP for s in sources)))

    src = np.array(sources)
    refs = farthest_point_indices(src, min(10 if n_ref is None else n_ref, n_src))
    return Placement(sources=_freeze(src), receivers=_freeze(np.array(receivers)),
                     reference_source_indices=refs)


# ---------------------------------------------------------------------------
# Camera / panorama projection
# ---------------------------------------------------------------------------

def world_to_camera(p, receiver) -> np.ndarray:
    """Translate into the receiver-centered frame (identity rotation)."""
    return np.asarray(p, dtype=float) - np.asarray(receiver, dtype=float)


@lru_cache(maxsize=8)
def equirect_dirs(h: int = PANO_H, w: int = PANO_W) -> np.ndarray:
    """Unit view direction for each panorama pixel center, shape (h, w, 3)."""
    if h < 2 or w < 2:
        raise ValueError("panorama needs at least 2 rows and 2 columns")
    i = np.arange(h)
    j = np.arange(w)
    elev = np.pi / 2 - np.pi * (i + 0.5) / h          # top row highest
    azim = 2 * np.pi * (j + 0.5) / w - np.pi          # center column ~ 0
    ce, se = np.cos(elev), np.sin(elev)
    ca, sa = np.cos(azim), np.sin(azim)
    dirs = np.empty((h, w, 3))
    dirs[..., 0] = ce[:, None] * ca[None, :]
    dirs[..., 1] = ce[:, None] * sa[None, :]
    dirs[..., 2] = se[:, None] * np.ones_like(ca)[None, :]
    return _freeze(dirs)


def dirs_to_pixels(vectors: np.ndarray, h: int = PANO_H, w: int = PANO_W):
    """Inverse of equirect_dirs: fractional (row, col) for direction vectors."""
    v = vectors / np.linalg.norm(vectors, axis=-1, keepdims=True)
    elev = np.arcsin(np.clip(v[..., 2], -1.0, 1.0))
    azim = np.arctan2(v[..., 1], v[..., 0])
    row = (np.pi / 2 - elev) * h / np.pi - 0.5
    col = (azim + np.pi) * w / (2 * np.pi) - 0.5
    return row, col


@dataclass(frozen=True)
class PanoramaDepth:
    """Per-pixel distance to the room boundary, meters."""

    values: np.ndarray   # (H, W)
    receiver: np.ndarray  # (3,)


@dataclass(frozen=True)
class CoordMap:
    """Per-pixel 3D boundary coordinates in the receiver's camera frame."""

    values: np.ndarray   # (H, W, 3)


@dataclass(frozen=True)
class ReflectionMaps:
    """Offset-vector maps between positions and visible boundary points."""

    source_map: np.ndarray                 # (H, W, 3)
    receiver_map: np.ndarray               # (H, W, 3)
    reference_maps: tuple[np.ndarray, ...]  # K maps, each (H, W, 3)


def _ray_surface_depths(room: Room, origin: np.ndarray, dirs_flat: np.ndarray) -> np.ndarray:
    """Nearest surface-hit distance for each ray; inf where nothing is hit."""
    n_rays = len(dirs_flat)
    best = np.full(n_rays, np.inf)
    for s_idx, verts in enumerate(room.surfaces):
        n = room.normals[s_idx]
        off = room.offsets[s_idx]
        denom = dirs_flat @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (off - origin @ n) / denom
        cand = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t < best)
        if not np.any(cand):
            continue
        pts = origin + t[cand, None] * dirs_flat[cand]
        ax = int(np.argmax(np.abs(n)))
        keep = [i for i in range(3) if i != ax]
        inside = _points_in_polygon_2d(pts[:, keep], verts[:, keep])
        idx = np.where(cand)[0][inside]
        best[idx] = t[cand][inside]
    return best


def render_panorama_depth(room: Room, receiver, h: int = PANO_H, w: int = PANO_W) -> PanoramaDepth:
    """Ray-cast the equirectangular depth panorama at the receiver."""
    rcv = np.asarray(receiver, dtype=float)
    if not room.contains(rcv):
        raise InvalidViewpointError(
            f"receiver {rcv.tolist()} is not strictly inside room {room.id}"
        )
    dirs = equirect_dirs(h, w).reshape(-1, 3)
    depth = _ray_surface_depths(room, rcv, dirs)
    if not np.all(np.isfinite(depth)):
        raise InvalidGeometryError(f"room {room.id}: panorama rays escaped the surface set")
    return PanoramaDepth(values=_freeze(depth.reshape(h, w)), receiver=_freeze(rcv))


def depth_to_coords(depth: PanoramaDepth) -> CoordMap:
    """Rectify depths into camera-frame 3D coordinates of boundary points."""
    h, w = depth.values.shape
    coords = depth.values[..., None] * equirect_dirs(h, w)
    return CoordMap(values=_freeze(coords))


def build_reflection_maps(coords: CoordMap, receiver, target_src, ref_srcs) -> ReflectionMaps:
    """Subtract boundary coordinates from camera-frame source positions."""
    rel_t = world_to_camera(target_src, receiver)
    source_map = rel_t[None, None, :] - coords.values
    ref_maps = []
    for rs in ref_srcs:
        rel = world_to_camera(rs, receiver)
        ref_maps.append(_freeze(rel[None, None, :] - coords.values))
    return ReflectionMaps(
        source_map=_freeze(source_map),
        receiver_map=coords.values,
        reference_maps=tuple(ref_maps),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def room_to_dict(room: Room) -> dict:
    return {
        "id": room.id,
        "kind": room.kind,
        "surfaces": [s.tolist() for s in room.surfaces],
        "material_ids": list(room.material_ids),
        "bbox_min": room.bbox_min.tolist(),
        "bbox_max": room.bbox_max.tolist(),
        "footprint": room.footprint.tolist(),
        "height": room.height,
        "volume": room.volume,
    }


def room_from_dict(d: dict) -> Room:
    surfaces = [np.array(s, dtype=float) for s in d["surfaces"]]
    fp = np.array(d["footprint"], dtype=float)
    return _assemble_room(d["id"], d["kind"], surfaces, d["material_ids"], fp, d["height"])


def placement_to_dict(p: Placement) -> dict:
    return {
        "sources": p.sources.tolist(),
        "receivers": p.receivers.tolist(),
        "reference_source_indices": list(p.reference_source_indices),
    }


def placement_from_dict(d: dict) -> Placement:
    return Placement(
        sources=_freeze(np.array(d["sources"], dtype=float)),
        receivers=_freeze(np.array(d["receivers"], dtype=float)),
        reference_source_indices=tuple(d["reference_source_indices"]),
    )


def save_panorama(path, pano: PanoramaDepth) -> None:
    """Raw little-endian float32, row-major, plus a JSON sidecar."""
    path = Path(path)
    pano.values.astype("<f4").tofile(path)
    sidecar = {
        "receiver": pano.receiver.tolist(),
        "height": int(pano.values.shape[0]),
        "width": int(pano.values.shape[1]),
        "dtype": "<f4",
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_panorama(path) -> PanoramaDepth:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    values = np.fromfile(path, dtype="<f4").reshape(meta["height"], meta["width"])
    return PanoramaDepth(values=_freeze(values.astype(float)),
                         receiver=_freeze(np.array(meta["receiver"], dtype=float)))
