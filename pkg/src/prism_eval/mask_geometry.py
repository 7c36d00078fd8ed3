"""Mask construction for contrastive view benchmarks.

Pipeline: a camera model on the viewing sphere, a z-buffer triangle
rasterizer, source-view face visibility reprojected into the target view,
morphological refinement, an epipolar occluded-volume mask, and the
positive/negative mask composition used to drive inpainting.

Conventions (fixed so masks are bit-reproducible):
  - world up is +Z, objects are centered at the origin;
  - right-handed look-at camera, OpenCV-style axes (x right, y down,
    z forward), principal point at the image center;
  - pixel (row, col) has its center at (col + 0.5, row + 0.5);
  - depth is camera-space z, +inf for background.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core_io import CameraPose, ContractError, CorruptionError, DataError, FormatError

DEFAULT_IMAGE_SIZE = 512
DEFAULT_FOV_DEG = 50.0

GRID_AZIMUTHS = 16
GRID_AZIMUTH_STEP_DEG = 22.5
GRID_ELEVATION_DEG = 30.0
GRID_RADIUS = 2.7

NEAR_PLANE = 1e-6
FACE_AREA_EPS = 1e-14

EPIPOLAR_SAMPLES_PER_RAY = 64
EPIPOLAR_CLOSE_RADIUS = 3
EPIPOLAR_SILHOUETTE_DILATE_RADIUS = 20
EPIPOLAR_DEPTH_EPSILON = 1e-4

REFINE_CLOSE_RADIUS = 4
REFINE_OPEN_RADIUS = 10

_RAY_CHUNK = 8192


# ---------------------------------------------------------------------------
# Meshes


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh in object units."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int32

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if not np.all(np.isfinite(verts)):
            raise DataError("mesh vertices contain non-finite values")
        if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
            raise DataError("face indices out of range")
        if faces.size:
            tri = verts[faces]
            areas = 0.5 * np.linalg.norm(
                np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
            )
            if np.any(areas <= FACE_AREA_EPS):
                raise DataError("mesh contains degenerate (zero-area) faces")
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def face_count(self) -> int:
        return int(self.faces.shape[0])

    @property
    def bounding_radius(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices, axis=1).max())


def load_obj(path: str | Path) -> TriMesh:
    """Load a mesh from OBJ-subset text (v/f lines only, normals ignored).

    Polygonal faces are fan-triangulated; degenerate faces are filtered.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad vertex coordinate") from None
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: bad face index {token!r}") from None
                    if i < 1:
                        raise FormatError(f"{path}:{lineno}: face indices must be >= 1")
                    idx.append(i - 1)
                if len(idx) < 3:
                    raise FormatError(f"{path}:{lineno}: face needs >= 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # other OBJ statements (vn, vt, usemtl, ...) are ignored
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    if tris.size:
        if tris.max() >= len(verts):
            raise FormatError(f"{path}: face index beyond vertex count")
        tri = verts[tris]
        areas = 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )
        tris = tris[areas > FACE_AREA_EPS]
    return TriMesh(verts, tris)


def normalize_mesh(mesh: TriMesh) -> TriMesh:
    """Center the bounding box at the origin and scale to unit radius."""
    if len(mesh.vertices) == 0:
        return mesh
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    centered = mesh.vertices - 0.5 * (lo + hi)
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius <= 0.0:
        raise DataError("mesh collapses to a point; cannot normalize")
    return TriMesh(centered / radius, mesh.faces)


# ---------------------------------------------------------------------------
# Camera


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera rotation, center, and intrinsics."""

    rotation: np.ndarray  # (3, 3), rows = right, down, forward
    position: np.ndarray  # (3,) world-space center
    focal_px: float
    center_px: float
    image_size: int

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.position) @ self.rotation.T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project world points; returns pixel (u, v) and camera depth z."""
        cam = self.world_to_camera(np.atleast_2d(points))
        z = cam[:, 2]
        safe = np.where(np.abs(z) < NEAR_PLANE, NEAR_PLANE, z)
        u = self.center_px + self.focal_px * cam[:, 0] / safe
        v = self.center_px + self.focal_px * cam[:, 1] / safe
        return u, v, z

    def pixel_ray_dirs(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Unnormalized world ray directions through pixel centers.

        The direction has unit camera-z component, so the ray parameter
        equals camera-space depth.
        """
        u = np.asarray(cols, dtype=np.float64) + 0.5
        v = np.asarray(rows, dtype=np.float64) + 0.5
        d_cam = np.stack(
            [
                (u - self.center_px) / self.focal_px,
                (v - self.center_px) / self.focal_px,
                np.ones_like(u),
            ],
            axis=-1,
        )
        return d_cam @ self.rotation  # == rotation.T applied to each row


def camera_from_pose(
    pose: CameraPose,
    image_size: int = DEFAULT_IMAGE_SIZE,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> Camera:
    """Look-at camera on the viewing sphere, aimed at the origin."""
    az = math.radians(pose.azimuth_deg)
    el = math.radians(pose.elevation_deg)
    position = pose.radius * np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )
    forward = -position / np.linalg.norm(position)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])  # looking straight up/down
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    focal = (image_size / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Camera(
        rotation=rotation,
        position=position,
        focal_px=focal,
        center_px=image_size / 2.0,
        image_size=int(image_size),
    )


def misaligned_pose(true_target_index: int, offset_steps: int) -> CameraPose:
    """Grid pose rotated by a nonzero number of azimuth steps."""
    if not 0 <= true_target_index < GRID_AZIMUTHS:
        raise ContractError(f"target index must be in [0, {GRID_AZIMUTHS})")
    if offset_steps % GRID_AZIMUTHS == 0:
        raise ContractError("offset must be nonzero modulo the grid size")
    index = (true_target_index + offset_steps) % GRID_AZIMUTHS
    return CameraPose(
        azimuth_deg=GRID_AZIMUTH_STEP_DEG * index,
        elevation_deg=GRID_ELEVATION_DEG,
        radius=GRID_RADIUS,
    )


def grid_pose(index: int) -> CameraPose:
    """Pose for one of the 16 evenly spaced azimuths on the standard ring."""
    if not 0 <= index < GRID_AZIMUTHS:
        raise ContractError(f"grid index must be in [0, {GRID_AZIMUTHS})")
    return CameraPose(GRID_AZIMUTH_STEP_DEG * index, GRID_ELEVATION_DEG, GRID_RADIUS)


# ---------------------------------------------------------------------------
# Rasterization


@dataclass(frozen=True)
class RenderBuffers:
    """Per-pixel nearest-hit depth and owning face id (-1 = background)."""

    depth: np.ndarray  # (S, S) float64, +inf background
    face_id: np.ndarray  # (S, S) int32, -1 background

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        face_id = np.asarray(self.face_id, dtype=np.int32)
        if depth.shape != face_id.shape or depth.ndim != 2:
            raise DataError("depth and face_id buffers must share a 2-D shape")
        hit = face_id >= 0
        if not np.array_equal(hit, np.isfinite(depth)):
            raise DataError("face_id >= 0 must coincide with finite depth")
        depth.flags.writeable = False
        face_id.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "face_id", face_id)

    @property
    def silhouette(self) -> np.ndarray:
        return self.face_id >= 0


def _front_facing(mesh: TriMesh, camera: Camera) -> np.ndarray:
    """Per-face test: does the camera center lie on the normal side?"""
    tri = mesh.vertices[mesh.faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return np.einsum("fk,fk->f", normals, camera.position - tri[:, 0]) > 0.0


def rasterize(mesh: TriMesh, camera: Camera) -> RenderBuffers:
    """Hard z-buffer rasterization of front-facing triangles.

    The nearest triangle wins each pixel; exact depth ties keep the lower
    face index.  Faces with any vertex at or behind the near plane are
    skipped (objects here sit well inside the viewing sphere).
    """
    size = camera.image_size
    depth = np.full((size, size), np.inf)
    face_id = np.full((size, size), -1, dtype=np.int32)
    if mesh.face_count == 0:
        return RenderBuffers(depth, face_id)

    u, v, z = camera.project(mesh.vertices)
    front = _front_facing(mesh, camera)
    for fi in range(mesh.face_count):
        if not front[fi]:
            continue
        i0, i1, i2 = mesh.faces[fi]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if min(z0, z1, z2) <= NEAR_PLANE:
            continue
        x0, x1, x2 = u[i0], u[i1], u[i2]
        y0, y1, y2 = v[i0], v[i1], v[i2]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        col_lo = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        col_hi = min(size - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        row_lo = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        row_hi = min(size - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if col_lo > col_hi or row_lo > row_hi:
            continue
        px = np.arange(col_lo, col_hi + 1, dtype=np.float64) + 0.5
        py = np.arange(row_lo, row_hi + 1, dtype=np.float64) + 0.5
        gx = px[None, :]
        gy = py[:, None]
        w0 = (x2 - x1) * (gy - y1) - (y2 - y1) * (gx - x1)
        w1 = (x0 - x2) * (gy - y2) - (y0 - y2) * (gx - x2)
        w2 = (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)
        sign = 1.0 if area2 > 0.0 else -1.0
        inside = (w0 * sign >= 0.0) & (w1 * sign >= 0.0) & (w2 * sign >= 0.0)
        if not inside.any():
            continue
        # screen barycentrics interpolate 1/z linearly
        inv_z = (w0 / z0 + w1 / z1 + w2 / z2) / area2
        window = (slice(row_lo, row_hi + 1), slice(col_lo, col_hi + 1))
        with np.errstate(divide="ignore", over="ignore"):
            z_pix = 1.0 / inv_z
        closer = inside & (z_pix > 0.0) & (z_pix < depth[window])
        if closer.any():
            depth[window][closer] = z_pix[closer]
            face_id[window][closer] = fi
    return RenderBuffers(depth, face_id)


# ---------------------------------------------------------------------------
# Visibility analysis


def visible_faces(mesh: TriMesh, src_camera: Camera, min_pixels: int = 1) -> set[int]:
    """Faces owning at least ``min_pixels`` pixels in the source render."""
    buffers = rasterize(mesh, src_camera)
    ids = buffers.face_id[buffers.face_id >= 0]
    if ids.size == 0:
        return set()
    counts = np.bincount(ids, minlength=mesh.face_count)
    return set(np.nonzero(counts >= min_pixels)[0].tolist())


@dataclass(frozen=True)
class BinaryMask:
    """Square boolean mask tagged with its resolution."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DataError(f"mask must be square 2-D, got shape {arr.shape}")
        arr = arr.copy() if arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def resolution(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


def _same_resolution(*masks: BinaryMask) -> int:
    res = {m.resolution for m in masks}
    if len(res) != 1:
        raise ContractError(f"masks disagree in resolution: {sorted(res)}")
    return res.pop()


def visibility_masks(
    mesh: TriMesh,
    src_camera: Camera,
    tgt_camera: Camera,
    min_pixels: int = 1,
) -> tuple[BinaryMask, BinaryMask, BinaryMask]:
    """Raw (visibility, invisibility, silhouette) masks in the target view.

    Visibility marks target pixels whose owning face is visible from the
    source; invisibility is its complement within the silhouette.  The two
    are disjoint and their union is the silhouette.
    """
    visible = visible_faces(mesh, src_camera, min_pixels=min_pixels)
    tgt = rasterize(mesh, tgt_camera)
    silhouette = tgt.silhouette
    if visible:
        lookup = np.zeros(mesh.face_count, dtype=bool)
        lookup[sorted(visible)] = True
        vis = silhouette & lookup[np.where(silhouette, tgt.face_id, 0)]
    else:
        vis = np.zeros_like(silhouette)
    invis = silhouette & ~vis
    return BinaryMask(vis), BinaryMask(invis), BinaryMask(silhouette)


# ---------------------------------------------------------------------------
# Morphology


@dataclass(frozen=True)
class StructuringElement:
    """Disc kernel: offsets within ``radius`` pixels of the center."""

    radius: int
    footprint: np.ndarray

    def __post_init__(self) -> None:
        fp = np.asarray(self.footprint, dtype=bool)
        if fp.shape != (2 * self.radius + 1, 2 * self.radius + 1):
            raise DataError("footprint shape must be (2r+1, 2r+1)")
        if not fp[self.radius, self.radius]:
            raise DataError("structuring element center must be set")
        if not np.array_equal(fp, fp[::-1, ::-1]):
            raise DataError("structuring element must be symmetric")
        fp.flags.writeable = False
        object.__setattr__(self, "footprint", fp)

    @classmethod
    def disc(cls, radius: int) -> "StructuringElement":
        if radius < 0:
            raise DataError("radius must be >= 0")
        span = np.arange(-radius, radius + 1)
        fp = span[:, None] ** 2 + span[None, :] ** 2 <= radius**2
        return cls(radius=radius, footprint=fp)


MORPHOLOGY_KINDS = ("dilate", "erode", "open", "close")


def morphology(mask: BinaryMask, kind: str, se: StructuringElement) -> BinaryMask:
    """Binary morphology with false-outside border handling."""
    if kind not in MORPHOLOGY_KINDS:
        raise ContractError(f"unknown morphology kind {kind!r}")
    px = mask.pixels
    fp = se.footprint
    if kind == "dilate":
        out = ndimage.binary_dilation(px, structure=fp, border_value=0)
    elif kind == "erode":
        out = ndimage.binary_erosion(px, structure=fp, border_value=0)
    elif kind == "open":
        out = ndimage.binary_dilation(
            ndimage.binary_erosion(px, structure=fp, border_value=0),
            structure=fp,
            border_value=0,
        )
    else:  # close
        out = ndimage.binary_erosion(
            ndimage.binary_dilation(px, structure=fp, border_value=0),
            structure=fp,
            border_value=0,
        )
    return BinaryMask(out)


def refine_masks(
    vis: BinaryMask,
    invis: BinaryMask,
    close_radius: int = REFINE_CLOSE_RADIUS,
    open_radius: int = REFINE_OPEN_RADIUS,
) -> tuple[BinaryMask, BinaryMask]:
    """Clean mask boundaries: close, remove overlap, open.

    Visibility wins the overlap (visible regions must stay uncorrupted), so
    the closed visibility is subtracted from the closed invisibility.
    Outputs are disjoint because opening is anti-extensive.
    """
    _same_resolution(vis, invis)
    se_close = StructuringElement.disc(close_radius)
    se_open = StructuringElement.disc(open_radius)
    vis_closed = morphology(vis, "close", se_close)
    invis_closed = morphology(invis, "close", se_close)
    invis_closed = BinaryMask(invis_closed.pixels & ~vis_closed.pixels)
    return morphology(vis_closed, "open", se_open), morphology(invis_closed, "open", se_open)


# ---------------------------------------------------------------------------
# Epipolar occluded-volume mask


def _ray_hit_params(
    mesh: TriMesh,
    origin: np.ndarray,
    dirs: np.ndarray,
    t_min: float = 1e-9,
) -> np.ndarray:
    """All ray/triangle intersection parameters, per ray, sorted ascending.

    Rays share one origin.  Returns an (R, F) float64 array padded with
    +inf beyond each ray's hit count.  Parameters are in units of the ray
    direction's length.
    """
    tri = mesh.vertices[mesh.faces]
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    tvec = origin[None, :] - v0
    # Moller-Trumbore with a shared origin: all per-ray quantities reduce to
    # dot products against precomputed per-face vectors.
    n_det = np.cross(e2, e1)
    n_u = np.cross(e2, tvec)
    n_v = np.cross(tvec, e1)
    t_num = np.einsum("fk,fk->f", e2, n_v)

    hits = np.full((dirs.shape[0], mesh.face_count), np.inf)
    for start in range(0, dirs.shape[0], _RAY_CHUNK):
        d = dirs[start : start + _RAY_CHUNK]
        det = d @ n_det.T
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = (d @ n_u.T) * inv
            v = (d @ n_v.T) * inv
            t = t_num[None, :] * inv
        ok = (
            (np.abs(det) > 1e-12)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t > t_min)
        )
        block = np.where(ok, t, np.inf)
        block.sort(axis=1)
        hits[start : start + _RAY_CHUNK] = block
    return hits


def _count_beyond(sorted_hits: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """For each ray, count finite hits strictly greater than each query.

    ``sorted_hits`` rows are ascending with +inf padding, so a row-wise
    searchsorted over entries <= query counts exactly the finite hits not
    beyond it.
    """
    n_hits = np.sum(np.isfinite(sorted_hits), axis=1)
    counted_le = np.empty(queries.shape, dtype=np.int64)
    for r in range(sorted_hits.shape[0]):
        counted_le[r] = np.searchsorted(sorted_hits[r], queries[r], side="right")
    return n_hits[:, None] - counted_le


def epipolar_mask(
    mesh: TriMesh,
    src_camera: Camera,
    tgt_camera: Camera,
    samples_per_ray: int = EPIPOLAR_SAMPLES_PER_RAY,
    close_radius: int = EPIPOLAR_CLOSE_RADIUS,
    silhouette_dilate_radius: int = EPIPOLAR_SILHOUETTE_DILATE_RADIUS,
    depth_epsilon: float = EPIPOLAR_DEPTH_EPSILON,
    drop_target_occluded: bool = True,
    threads: int = 1,
) -> BinaryMask:
    """Target-view mask of occluded free space behind the source surface.

    Each source ray is extended past its first surface hit and sampled at a
    fixed world-space step up to twice the mesh bounding radius.  Samples
    inside the object (odd number of remaining intersections along the ray)
    are dropped.  Survivors are projected into the target view and kept when
    not occluded there; the result is closed and clipped to a dilated
    silhouette so edits stay near the object.
    """
    size = tgt_camera.image_size
    if src_camera.image_size != size:
        raise ContractError("source and target cameras must share the image size")
    tgt = rasterize(mesh, tgt_camera)
    mask = np.zeros((size, size), dtype=bool)
    if mesh.face_count == 0:
        return BinaryMask(mask)

    src = rasterize(mesh, src_camera)
    rows, cols = np.nonzero(src.face_id >= 0)
    if rows.size == 0:
        return BinaryMask(mask)
    dirs = src_camera.pixel_ray_dirs(rows, cols)
    scale = np.linalg.norm(dirs, axis=1)
    unit_dirs = dirs / scale[:, None]
    t_hit = src.depth[rows, cols] * scale  # world-space distance to first hit

    seg_len = 2.0 * mesh.bounding_radius
    step = seg_len / samples_per_ray
    offsets = step * np.arange(1, samples_per_ray + 1)

    def survivors_for(sel: np.ndarray) -> np.ndarray:
        hits = _ray_hit_params(mesh, src_camera.position, unit_dirs[sel])
        t_samples = t_hit[sel][:, None] + offsets[None, :]
        inside = _count_beyond(hits, t_samples) % 2 == 1
        keep = ~inside
        pts = (
            src_camera.position[None, None, :]
            + unit_dirs[sel][:, None, :] * t_samples[:, :, None]
        )
        return pts[keep]

    chunks = [
        np.arange(start, min(start + _RAY_CHUNK, rows.size))
        for start in range(0, rows.size, _RAY_CHUNK)
    ]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            surviving = list(pool.map(survivors_for, chunks))
    else:
        surviving = [survivors_for(sel) for sel in chunks]
    points = (
        np.concatenate(surviving, axis=0) if surviving else np.zeros((0, 3))
    )

    if points.shape[0]:
        u, v, z = tgt_camera.project(points)
        in_front = z > NEAR_PLANE
        col = np.floor(u).astype(np.int64)
        row = np.floor(v).astype(np.int64)
        in_image = in_front & (col >= 0) & (col < size) & (row >= 0) & (row < size)
        col = col[in_image]
        row = row[in_image]
        z = z[in_image]
        if drop_target_occluded:
            visible = z <= tgt.depth[row, col] * (1.0 + depth_epsilon)
            row, col = row[visible], col[visible]
        mask[row, col] = True

    closed = morphology(BinaryMask(mask), "close", StructuringElement.disc(close_radius))
    neighborhood = morphology(
        BinaryMask(tgt.silhouette),
        "dilate",
        StructuringElement.disc(silhouette_dilate_radius),
    )
    return BinaryMask(closed.pixels & neighborhood.pixels)


# ---------------------------------------------------------------------------
# Label-mask composition


def compose_label_masks(
    vis_refined: BinaryMask,
    invis_refined: BinaryMask,
    epipolar: BinaryMask,
) -> tuple[BinaryMask, BinaryMask]:
    """(positive, negative) inpainting regions.

    Positive edits may touch occluded surface plus occluded free space;
    negative edits corrupt the region that must stay fixed plus the same
    free space.
    """
    _same_resolution(vis_refined, invis_refined, epipolar)
    positive = BinaryMask(invis_refined.pixels | epipolar.pixels)
    negative = BinaryMask(vis_refined.pixels | epipolar.pixels)
    return positive, negative


def mask_weight(
    mask: BinaryMask,
    silhouette: BinaryMask,
    neighborhood_radius: int = EPIPOLAR_SILHOUETTE_DILATE_RADIUS,
) -> float:
    """Mask area relative to the silhouette, clipped to [0, 1].

    The numerator counts mask pixels inside the dilated silhouette
    neighborhood (the same region masks are confined to), so off-object
    epipolar area still contributes weight.
    """
    _same_resolution(mask, silhouette)
    sil_area = silhouette.area
    if sil_area == 0:
        raise ContractError("silhouette is empty")
    region = morphology(
        silhouette, "dilate", StructuringElement.disc(neighborhood_radius)
    ).pixels
    covered = int((mask.pixels & region).sum())
    return min(1.0, covered / sil_area)


# ---------------------------------------------------------------------------
# Mask files: portable bitmap (P4) plus a sidecar metadata line


def write_mask_pbm(mask: BinaryMask, path: str | Path, metadata: str | None = None) -> None:
    """Write a mask as binary PBM (1 = set); optional ``.meta`` sidecar."""
    size = mask.resolution
    header = f"P4\n{size} {size}\n".encode("ascii")
    packed = np.packbits(mask.pixels.astype(np.uint8), axis=1)
    Path(path).write_bytes(header + packed.tobytes())
    if metadata is not None:
        Path(str(path) + ".meta").write_text(metadata.rstrip("\n") + "\n", encoding="utf-8")


def read_mask_pbm(path: str | Path) -> BinaryMask:
    data = Path(path).read_bytes()
    if not data.startswith(b"P4"):
        raise FormatError(f"{path}: not a binary PBM file")
    # header: magic, whitespace, width, whitespace, height, single whitespace
    idx = 2
    fields = []
    while len(fields) < 2:
        while idx < len(data) and data[idx : idx + 1].isspace():
            idx += 1
        if idx < len(data) and data[idx : idx + 1] == b"#":
            while idx < len(data) and data[idx : idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx : idx + 1].isspace():
            idx += 1
        if start == idx:
            raise FormatError(f"{path}: truncated PBM header")
        fields.append(data[start:idx])
    idx += 1  # single whitespace after height
    try:
        width, height = int(fields[0]), int(fields[1])
    except ValueError:
        raise FormatError(f"{path}: bad PBM dimensions") from None
    if width != height:
        raise FormatError(f"{path}: pipeline masks must be square, got {width}x{height}")
    row_bytes = (width + 7) // 8
    expect = row_bytes * height
    payload = data[idx : idx + expect]
    if len(payload) < expect:
        raise CorruptionError(f"{path}: truncated PBM payload")
    bits = np.unpackbits(
        np.frombuffer(payload, dtype=np.uint8).reshape(height, row_bytes), axis=1
    )
    return BinaryMask(bits[:, :width].astype(bool))
