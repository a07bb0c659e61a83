"""File formats for pipeline inputs/outputs and a synthetic scene generator.

Formats (all little-endian):

MSPC1 point cloud
    header  = magic b"MSPC1" + u32 dim + u64 point count
    record  = 3 x f64 position + u32 observations + dim x f32 embedding
    Saving then loading reproduces positions, embeddings, and counts
    bit-exactly; save(load(save(x))) is byte-identical.

Frame directory
    frames.jsonl   one JSON object per frame: timestamp, pose as 7 reals
                   (qw qx qy qz tx ty tz), point-blob path, mask-blob paths
    camera.json    pinhole intrinsics + sensor-to-camera extrinsic
    *.pts          u64 count + count x 3 x f64 sensor-frame points
    *.msk          MSK1 mask blob, bitmap run-length encoded

Scene spec
    JSON document describing terrain patches (ground-plane polygons),
    box objects, a trajectory, and sampling parameters; see README.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from tsg.model import CameraModel, Embedding, Pose, SemanticPoint, SemanticPointCloud
from tsg.prompt import hash_embedding

log = logging.getLogger(__name__)

CLOUD_MAGIC = b"MSPC1"
MASK_MAGIC = b"MSK1"
INDEX_NAME = "frames.jsonl"
CAMERA_NAME = "camera.json"

MASK_TERRAIN = "terrain"
MASK_AGNOSTIC = "agnostic"


class FormatError(ValueError):
    """A file does not conform to its declared format."""


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class CloudDimensionError(FormatError):
    """Header dimension disagrees with the records or the expected dimension."""


class FrameOrderError(FormatError):
    """Frame timestamps are not sorted; carries the offending frame index."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


# ---------------------------------------------------------------------------
# MSPC1 point cloud
# ---------------------------------------------------------------------------


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pos", "<f8", (3,)), ("obs", "<u4"), ("emb", "<f4", (dim,))])


def save_cloud(cloud: SemanticPointCloud, path: str | Path) -> None:
    path = Path(path)
    rec = np.zeros(len(cloud), dtype=_record_dtype(cloud.dim))
    for i, p in enumerate(cloud.points):
        rec[i] = (p.position, p.observations, p.embedding.values)
    header = CLOUD_MAGIC + struct.pack("<IQ", cloud.dim, len(cloud))
    path.write_bytes(header + rec.tobytes())


def load_cloud(path: str | Path, expect_dim: int | None = None) -> SemanticPointCloud:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(CLOUD_MAGIC) + 12:
        raise TruncatedPayloadError(f"{path}: file shorter than the MSPC1 header")
    if blob[: len(CLOUD_MAGIC)] != CLOUD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:5]!r}")
    dim, count = struct.unpack_from("<IQ", blob, len(CLOUD_MAGIC))
    if expect_dim is not None and dim != expect_dim:
        raise CloudDimensionError(f"{path}: header dim {dim}, expected {expect_dim}")
    payload = blob[len(CLOUD_MAGIC) + 12 :]
    rec_size = _record_dtype(dim).itemsize
    if len(payload) < count * rec_size:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, records need {count * rec_size}"
        )
    if len(payload) != count * rec_size:
        raise CloudDimensionError(
            f"{path}: {len(payload) - count * rec_size} trailing bytes; "
            "header dimension inconsistent with records"
        )
    rec = np.frombuffer(payload, dtype=_record_dtype(dim))
    points = []
    for i in range(count):
        obs = int(rec["obs"][i])
        if obs == 0:
            emb = Embedding.null(dim)
        else:
            emb = Embedding(rec["emb"][i].copy(), raw_norm=1.0)
        points.append(SemanticPoint(rec["pos"][i].copy(), emb, obs))
    return SemanticPointCloud(points=points, dim=dim)


# ---------------------------------------------------------------------------
# Segment masks and scan frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentMask:
    """One image-space segment: boolean raster plus a semantic embedding."""

    bitmap: np.ndarray
    embedding: Embedding
    kind: str
    label: str = ""

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        bm.setflags(write=False)
        object.__setattr__(self, "bitmap", bm)
        if bm.ndim != 2:
            raise ValueError("mask bitmap must be 2-D")
        if not bm.any():
            raise ValueError("mask must contain at least one true pixel")
        if self.kind == MASK_TERRAIN:
            if not self.label:
                raise ValueError("terrain masks carry a non-empty label")
        elif self.kind == MASK_AGNOSTIC:
            if self.label:
                raise ValueError("object-agnostic masks carry no label")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())


@dataclass(frozen=True)
class ScanFrame:
    """One time-synchronized scan: sensor-frame points plus image segments."""

    timestamp: float
    pose: Pose
    points: np.ndarray
    masks: tuple[SegmentMask, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masks", tuple(self.masks))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("scan points must be an (N, 3) array")


def _rle_encode(bitmap: np.ndarray) -> np.ndarray:
    """Alternating run lengths over the flattened raster, starting with False."""
    flat = bitmap.ravel()
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def _rle_decode(runs: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + int(run)] = True
        pos += int(run)
        value = not value
    if pos != flat.size:
        raise TruncatedPayloadError("mask run lengths do not cover the raster")
    return flat.reshape(shape)


def _save_mask(mask: SegmentMask, path: Path) -> None:
    h, w = mask.bitmap.shape
    kind = 0 if mask.kind == MASK_TERRAIN else 1
    label = mask.label.encode("utf-8")
    runs = _rle_encode(mask.bitmap)
    out = bytearray()
    out += MASK_MAGIC
    out += struct.pack("<IIBH", w, h, kind, len(label))
    out += label
    out += struct.pack("<I", mask.embedding.dim)
    out += mask.embedding.values.astype("<f4").tobytes()
    out += struct.pack("<Q", len(runs))
    out += runs.astype("<u4").tobytes()
    path.write_bytes(bytes(out))


def _load_mask(path: Path) -> SegmentMask:
    blob = path.read_bytes()
    if blob[: len(MASK_MAGIC)] != MASK_MAGIC:
        raise BadMagicError(f"{path}: bad mask magic")
    off = len(MASK_MAGIC)
    w, h, kind, label_len = struct.unpack_from("<IIBH", blob, off)
    off += struct.calcsize("<IIBH")
    label = blob[off : off + label_len].decode("utf-8")
    off += label_len
    (dim,) = struct.unpack_from("<I", blob, off)
    off += 4
    emb_bytes = blob[off : off + 4 * dim]
    if len(emb_bytes) < 4 * dim:
        raise TruncatedPayloadError(f"{path}: truncated mask embedding")
    emb = Embedding(np.frombuffer(emb_bytes, dtype="<f4").copy(), raw_norm=1.0)
    off += 4 * dim
    (n_runs,) = struct.unpack_from("<Q", blob, off)
    off += 8
    runs = np.frombuffer(blob[off : off + 4 * n_runs], dtype="<u4")
    if runs.size != n_runs:
        raise TruncatedPayloadError(f"{path}: truncated mask runs")
    bitmap = _rle_decode(runs, (h, w))
    return SegmentMask(bitmap, emb, MASK_TERRAIN if kind == 0 else MASK_AGNOSTIC,
                       label=label)


def save_camera(camera: CameraModel, path: str | Path) -> None:
    doc = {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "extrinsic": {
            "rotation": list(map(float, camera.extrinsic.rotation)),
            "translation": list(map(float, camera.extrinsic.translation)),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_camera(path: str | Path) -> CameraModel:
    doc = json.loads(Path(path).read_text())
    ext = doc["extrinsic"]
    return CameraModel(
        fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
        width=doc["width"], height=doc["height"],
        extrinsic=Pose(np.array(ext["rotation"]), np.array(ext["translation"])),
    )


def save_frames(frames: list[ScanFrame], camera: CameraModel, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_camera(camera, out_dir / CAMERA_NAME)
    lines = []
    for i, frame in enumerate(frames):
        pts_name = f"frame_{i:06d}.pts"
        blob = struct.pack("<Q", len(frame.points)) + frame.points.astype("<f8").tobytes()
        (out_dir / pts_name).write_bytes(blob)
        mask_names = []
        for j, mask in enumerate(frame.masks):
            name = f"frame_{i:06d}_m{j:02d}.msk"
            _save_mask(mask, out_dir / name)
            mask_names.append(name)
        pose = frame.pose
        lines.append(json.dumps({
            "t": frame.timestamp,
            "pose": list(map(float, pose.rotation)) + list(map(float, pose.translation)),
            "points": pts_name,
            "masks": mask_names,
        }, sort_keys=True))
    (out_dir / INDEX_NAME).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_frames(path: str | Path) -> Iterator[ScanFrame]:
    """Stream frames from a frame directory, one at a time.

    Raises FrameOrderError (naming the frame index) as soon as a timestamp
    decreases; never holds more than the frame being yielded.
    """
    path = Path(path)
    index = path / INDEX_NAME
    if not index.exists():
        return
    camera_path = path / CAMERA_NAME
    camera = load_camera(camera_path) if camera_path.exists() else None
    prev_t = None
    with open(index) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            t = float(entry["t"])
            if prev_t is not None and t < prev_t:
                raise FrameOrderError(i, f"frame {i}: timestamp {t} < previous {prev_t}")
            prev_t = t
            pose7 = entry["pose"]
            pose = Pose(np.array(pose7[:4]), np.array(pose7[4:]))
            blob = (path / entry["points"]).read_bytes()
            (n,) = struct.unpack_from("<Q", blob, 0)
            pts = np.frombuffer(blob[8:], dtype="<f8")
            if pts.size != 3 * n:
                raise TruncatedPayloadError(f"frame {i}: point blob truncated")
            masks = []
            for name in entry["masks"]:
                mask = _load_mask(path / name)
                if camera is not None and mask.bitmap.shape != (camera.height, camera.width):
                    raise FormatError(
                        f"frame {i}: mask raster {mask.bitmap.shape} does not match "
                        f"camera {(camera.height, camera.width)}"
                    )
                masks.append(mask)
            yield ScanFrame(t, pose, pts.reshape(n, 3).copy(), tuple(masks))


# ---------------------------------------------------------------------------
# Scene specification and synthetic generation
# ---------------------------------------------------------------------------


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    return (
        orient(p1, p2, p3) != orient(p1, p2, p4)
        and orient(p3, p4, p1) != orient(p3, p4, p2)
    )


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test for (N, 2) points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px, py = polygon[:, 0], polygon[:, 1]
    n = len(polygon)
    for i in range(n):
        j = (i - 1) % n
        crosses = (py[i] > y) != (py[j] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (px[j] - px[i]) * (y - py[i]) / (py[j] - py[i]) + px[i]
        inside ^= crosses & (x < xint)
    return inside


def polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True)
class TerrainPatch:
    label: str
    polygon: np.ndarray
    embedding: Embedding

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=np.float64)
        poly.setflags(write=False)
        object.__setattr__(self, "polygon", poly)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise ValueError("polygon must be (K>=3, 2)")
        k = len(poly)
        for i in range(k):
            for j in range(i + 1, k):
                if j == i or (j + 1) % k == i or (i + 1) % k == j:
                    continue
                if _segments_cross(poly[i], poly[(i + 1) % k], poly[j], poly[(j + 1) % k]):
                    raise ValueError(f"polygon for {self.label!r} self-intersects")


@dataclass(frozen=True)
class BoxObject:
    label: str
    center: np.ndarray
    extents: np.ndarray
    embedding: Embedding

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        e = np.asarray(self.extents, dtype=np.float64)
        c.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "extents", e)
        if np.any(e <= 0):
            raise ValueError(f"extents for {self.label!r} must be strictly positive")

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.extents / 2

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.extents / 2


@dataclass
class SceneSpec:
    """Synthetic scene description: see README for the JSON schema."""

    terrains: list[TerrainPatch] = field(default_factory=list)
    objects: list[BoxObject] = field(default_factory=list)
    trajectory: list[Pose] = field(default_factory=list)
    noise: float = 0.0
    dim: int = 64
    density: float = 6.0
    object_points: int = 150
    sensor_range: float = 30.0
    camera: CameraModel | None = None


def default_camera() -> CameraModel:
    # Nadir camera: sensor x, y, z map to camera x, -y, -z (180 deg about x),
    # so +z camera looks along -z world when the sensor is axis-aligned.
    down = Pose(np.array([0.0, 1.0, 0.0, 0.0]), np.zeros(3))
    return CameraModel(fx=110.0, fy=110.0, cx=80.0, cy=60.0, width=160, height=120,
                       extrinsic=down)


def _entity_embedding(entry: dict, label: str, dim: int) -> Embedding:
    if entry.get("embedding") is not None:
        return Embedding.unit(np.array(entry["embedding"], dtype=np.float64))
    return hash_embedding(label, dim)


def parse_scene_spec(doc: dict) -> SceneSpec:
    try:
        dim = int(doc.get("dim", 64))
        camera = load_camera_dict(doc["camera"]) if "camera" in doc else None
        terrains = [
            TerrainPatch(t["label"], np.array(t["polygon"], dtype=np.float64),
                         _entity_embedding(t, t["label"], dim))
            for t in doc.get("terrains", [])
        ]
        objects = [
            BoxObject(o["label"], np.array(o["center"], dtype=np.float64),
                      np.array(o["extents"], dtype=np.float64),
                      _entity_embedding(o, o["label"], dim))
            for o in doc.get("objects", [])
        ]
        trajectory = [
            Pose(np.array(p["rotation"], dtype=np.float64),
                 np.array(p["translation"], dtype=np.float64))
            for p in doc.get("trajectory", [])
        ]
        return SceneSpec(
            terrains=terrains,
            objects=objects,
            trajectory=trajectory,
            noise=float(doc.get("noise", 0.0)),
            dim=dim,
            density=float(doc.get("density", 6.0)),
            object_points=int(doc.get("object_points", 150)),
            sensor_range=float(doc.get("sensor_range", 30.0)),
            camera=camera,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"invalid scene spec: {exc}") from exc


def load_camera_dict(doc: dict) -> CameraModel:
    ext = doc.get("extrinsic")
    pose = Pose(np.array(ext["rotation"]), np.array(ext["translation"])) if ext \
        else default_camera().extrinsic
    return CameraModel(fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
                       width=doc["width"], height=doc["height"], extrinsic=pose)


def load_scene_spec(path: str | Path) -> SceneSpec:
    return parse_scene_spec(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GroundTruthObject:
    label: str
    center: np.ndarray
    extents: np.ndarray
    embedding: Embedding
    point_indices: tuple[int, ...]


def _sample_polygon(rng: np.random.Generator, patch: TerrainPatch, density: float,
                    exclude: list[BoxObject]) -> np.ndarray:
    area = polygon_area(patch.polygon)
    target = max(1, int(round(density * area)))
    lo = patch.polygon.min(axis=0)
    hi = patch.polygon.max(axis=0)
    out = []
    # Rejection sampling; cap attempts so degenerate polygons terminate.
    for _ in range(200):
        if len(out) >= target:
            break
        cand = rng.uniform(lo, hi, size=(target * 2, 2))
        keep = points_in_polygon(cand, patch.polygon)
        for box in exclude:
            keep &= ~(
                (cand[:, 0] >= box.lo[0]) & (cand[:, 0] <= box.hi[0])
                & (cand[:, 1] >= box.lo[1]) & (cand[:, 1] <= box.hi[1])
            )
        out.extend(cand[keep][: target - len(out)])
    pts = np.zeros((len(out), 3))
    if out:
        pts[:, :2] = np.array(out)
    return pts


def _ray_box_hits(origin: np.ndarray, dirs: np.ndarray, box: BoxObject) -> np.ndarray:
    """Entry distance of each ray into the box; inf where it misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (box.lo - origin) / dirs
        t2 = (box.hi - origin) / dirs
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    entry = np.where(tmin > 0, tmin, tmax)
    return np.where(hit, entry, np.inf)


def _render_masks(spec: SceneSpec, camera: CameraModel, pose: Pose) -> list[SegmentMask]:
    """Per-pixel nearest-entity assignment, i.e. projection with occlusion."""
    rays_cam = camera.ray_directions().reshape(-1, 3)
    cam_to_sensor = camera.extrinsic.inverse()
    rays_world = (pose.matrix() @ cam_to_sensor.matrix() @ rays_cam.T).T
    origin = pose.apply(cam_to_sensor.translation[None, :])[0]

    n_px = rays_world.shape[0]
    best_t = np.full(n_px, np.inf)
    best_entity = np.full(n_px, -1, dtype=np.int64)

    entities: list[tuple[str, str, Embedding]] = []
    for patch in spec.terrains:
        idx = len(entities)
        entities.append((MASK_TERRAIN, patch.label, patch.embedding))
        dz = rays_world[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origin[2] / dz
        hit_xy = origin[None, :2] + t[:, None] * rays_world[:, :2]
        valid = (t > 0) & np.isfinite(t)
        valid[valid] &= points_in_polygon(hit_xy[valid], patch.polygon)
        closer = valid & (t < best_t)
        best_t[closer] = t[closer]
        best_entity[closer] = idx
    for box in spec.objects:
        idx = len(entities)
        entities.append((MASK_AGNOSTIC, "", box.embedding))
        t = _ray_box_hits(origin, rays_world, box)
        closer = (t < best_t)
        best_t[closer] = t[closer]
        best_entity[closer] = idx

    masks = []
    shape = (camera.height, camera.width)
    for idx, (kind, label, emb) in enumerate(entities):
        bitmap = (best_entity == idx).reshape(shape)
        if bitmap.any():
            masks.append(SegmentMask(bitmap, emb, kind, label=label))
    return masks


def synth_scene(
    spec: SceneSpec, seed: int
) -> tuple[list[ScanFrame], CameraModel, SemanticPointCloud, list[GroundTruthObject]]:
    """Generate frames, camera, ground-truth cloud, and object list.

    Deterministic for a fixed seed. Terrain points are sampled inside their
    polygon (excluding object footprints), object points inside their box, so
    every ground-truth point carries exactly its generating entity's embedding.
    """
    if not spec.trajectory:
        raise ValueError("scene spec has an empty trajectory")
    rng = np.random.default_rng(seed)
    camera = spec.camera or default_camera()

    gt_points: list[SemanticPoint] = []
    gt_objects: list[GroundTruthObject] = []
    for patch in spec.terrains:
        pts = _sample_polygon(rng, patch, spec.density, spec.objects)
        for p in pts:
            gt_points.append(SemanticPoint(p, patch.embedding, observations=1))
    for box in spec.objects:
        lo, hi = box.lo, box.hi
        pts = rng.uniform(lo, hi, size=(spec.object_points, 3))
        start = len(gt_points)
        for p in pts:
            gt_points.append(SemanticPoint(p, box.embedding, observations=1))
        gt_objects.append(GroundTruthObject(
            box.label, box.center, box.extents, box.embedding,
            tuple(range(start, len(gt_points))),
        ))
    gt_cloud = SemanticPointCloud(points=gt_points, dim=spec.dim)
    positions = gt_cloud.positions()

    frames = []
    for i, pose in enumerate(spec.trajectory):
        dist = np.linalg.norm(positions - pose.translation, axis=1)
        world = positions[dist <= spec.sensor_range]
        sensor = pose.inverse().apply(world)
        if spec.noise > 0:
            sensor = sensor + rng.normal(0.0, spec.noise, size=sensor.shape)
        masks = _render_masks(spec, camera, pose)
        frames.append(ScanFrame(i / 10.0, pose, sensor, tuple(masks)))
    return frames, camera, gt_cloud, gt_objects


def strip_embeddings(cloud: SemanticPointCloud) -> SemanticPointCloud:
    """Copy of the cloud with geometry only, as phase-1 SLAM would supply."""
    null = Embedding.null(cloud.dim)
    pts = [SemanticPoint(p.position, null, 0) for p in cloud.points]
    return SemanticPointCloud(points=pts, dim=cloud.dim, frame=cloud.frame)
