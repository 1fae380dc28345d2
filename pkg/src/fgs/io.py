"""File formats: scenes (.fgs), planes (PLNE), voxel grids (VOXG), point sets
(PNTS or whitespace text), weight sidecars (HEAD), camera rigs and prompt
banks (JSON), plus tiny PGM/PPM preview emitters.

All binary payloads are little-endian; floats are stored as f32 regardless of
the float64 math used in memory.  Magic-number or length mismatches raise
FormatError.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import CameraView, GaussianScene
from .errors import FormatError, InvalidInputError
from .voxel import EMPTY_LABEL, TextBank, TextBankEntry, VoxelGrid

FGS_MAGIC = b"FGSC"
PLANE_MAGIC = b"PLNE"
VOXEL_MAGIC = b"VOXG"
POINTS_MAGIC = b"PNTS"
HEAD_MAGIC = b"HEAD"


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _expect_magic(f, magic: bytes, path):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, got {got!r}")


# ---------------------------------------------------------------------------
# Scenes: magic, u32 version, u32 N, u32 F, u32 layer count, layer offsets,
# then N records of f32 (mu[3], s[3], r[4], sigma, f[F]).
# ---------------------------------------------------------------------------

def save_scene(path, scene: GaussianScene) -> None:
    n, fdim = len(scene), scene.feature_dim
    rec = np.empty((n, 11 + fdim), dtype="<f4")
    rec[:, 0:3] = scene.mu
    rec[:, 3:6] = scene.scale
    rec[:, 6:10] = scene.quat
    rec[:, 10] = scene.opacity
    rec[:, 11:] = scene.feature
    with open(path, "wb") as f:
        f.write(FGS_MAGIC)
        f.write(struct.pack("<4I", 1, n, fdim, scene.layer_count))
        f.write(np.asarray(scene.layer_offsets, dtype="<u4").tobytes())
        f.write(rec.tobytes())


def load_scene(path) -> GaussianScene:
    with open(path, "rb") as f:
        _expect_magic(f, FGS_MAGIC, path)
        version, n, fdim, layers = struct.unpack("<4I", _read_exact(f, 16, "scene header"))
        if version != 1:
            raise FormatError(f"{path}: unsupported scene version {version}")
        offsets = np.frombuffer(_read_exact(f, 4 * layers, "layer offsets"), dtype="<u4")
        rec = np.frombuffer(_read_exact(f, 4 * n * (11 + fdim), "scene records"),
                            dtype="<f4").reshape(n, 11 + fdim).astype(np.float64)
    return GaussianScene(rec[:, 0:3], rec[:, 3:6], rec[:, 6:10], rec[:, 10],
                         rec[:, 11:], tuple(int(o) for o in offsets))


# ---------------------------------------------------------------------------
# Planes: magic, u32 H, u32 W, u32 C, f32 data row-major.
# Depth planes are single-channel with NaN marking invalid pixels.
# ---------------------------------------------------------------------------

def save_plane(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise InvalidInputError("plane must be (H, W) or (H, W, C)")
    with open(path, "wb") as f:
        f.write(PLANE_MAGIC)
        f.write(struct.pack("<3I", *a.shape))
        f.write(a.astype("<f4").tobytes())


def load_plane(path) -> np.ndarray:
    with open(path, "rb") as f:
        _expect_magic(f, PLANE_MAGIC, path)
        h, w, c = struct.unpack("<3I", _read_exact(f, 12, "plane header"))
        data = np.frombuffer(_read_exact(f, 4 * h * w * c, "plane data"), dtype="<f4")
    out = data.astype(np.float64).reshape(h, w, c)
    return out[:, :, 0] if c == 1 else out


def save_depth_plane(path, depth: np.ndarray, valid: np.ndarray | None = None) -> None:
    d = np.asarray(depth, dtype=np.float64).copy()
    if valid is not None:
        d[~np.asarray(valid, dtype=bool)] = np.nan
    save_plane(path, d)


def load_depth_plane(path):
    """Returns (depth, valid); NaN pixels come back as 0 with valid=False."""
    d = load_plane(path)
    if d.ndim != 2:
        raise FormatError(f"{path}: depth plane must be single-channel")
    valid = np.isfinite(d)
    d = np.where(valid, d, 0.0)
    return d, valid


# ---------------------------------------------------------------------------
# Voxel grids: magic, u32 dims[3], f32 origin[3], f32 voxel size,
# f32 occupancy mass per voxel, u16 label per voxel (0xFFFF = empty).
# Voxels are flattened in C order over (ix, iy, iz).
# ---------------------------------------------------------------------------

def save_voxel_grid(path, grid: VoxelGrid) -> None:
    if np.any(grid.labels >= 0xFFFF):
        raise InvalidInputError("labels exceed the u16 range of the format")
    labels = grid.labels.astype(np.int64).copy()
    labels[labels == EMPTY_LABEL] = 0xFFFF
    with open(path, "wb") as f:
        f.write(VOXEL_MAGIC)
        f.write(struct.pack("<3I", *grid.dims))
        f.write(struct.pack("<3f", *grid.origin))
        f.write(struct.pack("<f", grid.voxel_size))
        f.write(grid.occ_mass.astype("<f4").tobytes())
        f.write(labels.astype("<u2").tobytes())


def load_voxel_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        _expect_magic(f, VOXEL_MAGIC, path)
        nx, ny, nz = struct.unpack("<3I", _read_exact(f, 12, "voxel dims"))
        origin = struct.unpack("<3f", _read_exact(f, 12, "voxel origin"))
        (vs,) = struct.unpack("<f", _read_exact(f, 4, "voxel size"))
        count = nx * ny * nz
        occ = np.frombuffer(_read_exact(f, 4 * count, "occupancy"), dtype="<f4")
        lab = np.frombuffer(_read_exact(f, 2 * count, "labels"), dtype="<u2")
    labels = lab.astype(np.int32).copy()
    labels[labels == 0xFFFF] = EMPTY_LABEL
    return VoxelGrid(np.array(origin, dtype=np.float64), float(vs),
                     occ.astype(np.float64).reshape(nx, ny, nz),
                     labels.reshape(nx, ny, nz))


# ---------------------------------------------------------------------------
# Point sets: binary magic + u32 N + f32 xyz, or whitespace-separated text.
# ---------------------------------------------------------------------------

def save_points(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(POINTS_MAGIC)
        f.write(struct.pack("<I", pts.shape[0]))
        f.write(pts.astype("<f4").tobytes())


def load_points(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(4)
        if head == POINTS_MAGIC:
            (n,) = struct.unpack("<I", _read_exact(f, 4, "point count"))
            data = np.frombuffer(_read_exact(f, 12 * n, "points"), dtype="<f4")
            return data.astype(np.float64).reshape(n, 3)
    # fall back to whitespace XYZ text
    try:
        pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path}: neither a PNTS binary nor XYZ text ({e})") from e
    if pts.shape[1] != 3:
        raise FormatError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts


# ---------------------------------------------------------------------------
# Named-tensor sidecar: magic, u32 version, u32 count, then per entry
# u16 name length, utf-8 name, u32 ndim, u32 shape..., f32 data (C order).
# ---------------------------------------------------------------------------

def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(HEAD_MAGIC)
        f.write(struct.pack("<2I", 1, len(tensors)))
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.astype("<f4").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        _expect_magic(f, HEAD_MAGIC, path)
        version, count = struct.unpack("<2I", _read_exact(f, 8, "tensor header"))
        if version != 1:
            raise FormatError(f"{path}: unsupported sidecar version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape"))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 4 * n, f"tensor {name}"), dtype="<f4")
            out[name] = data.astype(np.float64).reshape(shape)
    return out


# ---------------------------------------------------------------------------
# Camera rigs: JSON index with per-view intrinsics, 3x4 row-major pose
# (camera -> ego) and optional plane paths relative to the JSON file.
# ---------------------------------------------------------------------------

def save_rig(path, views: list[CameraView], write_planes: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, v in enumerate(views):
        pose = np.concatenate([v.rotation, v.translation[:, None]], axis=1)
        entry = {
            "fx": v.fx, "fy": v.fy, "cx": v.cx, "cy": v.cy,
            "width": v.width, "height": v.height,
            "pose": [[float(x) for x in row] for row in pose],
            "timestamp": v.timestamp,
        }
        if write_planes:
            if v.ref_depth is not None:
                entry["depth"] = f"view{i:03d}_depth.plne"
                save_depth_plane(path.parent / entry["depth"], v.ref_depth, v.ref_valid)
            if v.ref_feature is not None:
                entry["feature"] = f"view{i:03d}_feature.plne"
                save_plane(path.parent / entry["feature"], v.ref_feature)
            if v.photo is not None:
                entry["photo"] = f"view{i:03d}_photo.plne"
                save_plane(path.parent / entry["photo"], v.photo)
        entries.append(entry)
    path.write_text(json.dumps({"views": entries}, indent=2))


def load_rig(path) -> list[CameraView]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    if "views" not in doc or not isinstance(doc["views"], list):
        raise FormatError(f"{path}: rig JSON must contain a 'views' list")
    views = []
    for entry in doc["views"]:
        try:
            pose = np.asarray(entry["pose"], dtype=np.float64)
            if pose.shape != (3, 4):
                raise FormatError(f"{path}: pose must be 3x4 row-major")
            depth = valid = feature = photo = None
            if entry.get("depth"):
                depth, valid = load_depth_plane(path.parent / entry["depth"])
            if entry.get("feature"):
                feature = load_plane(path.parent / entry["feature"])
                if feature.ndim == 2:
                    feature = feature[:, :, None]
            if entry.get("photo"):
                photo = load_plane(path.parent / entry["photo"])
            views.append(CameraView(
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                width=int(entry["width"]), height=int(entry["height"]),
                rotation=pose[:, :3], translation=pose[:, 3],
                timestamp=int(entry.get("timestamp", 0)),
                ref_depth=depth, ref_valid=valid, ref_feature=feature, photo=photo,
            ))
        except KeyError as e:
            raise FormatError(f"{path}: rig view missing field {e}") from e
    return views


# ---------------------------------------------------------------------------
# Prompt banks: JSON list of {class, prompts, embedding_path}; embeddings are
# (P, F) planes, one row per prompt.
# ---------------------------------------------------------------------------

def save_bank(path, bank: TextBank) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    classes = []
    for i, entry in enumerate(bank.entries):
        emb_name = f"bank{i:03d}_{_safe_name(entry.class_name)}.plne"
        save_plane(path.parent / emb_name, entry.embeddings)
        classes.append({"class": entry.class_name, "prompts": entry.prompts,
                        "embedding_path": emb_name})
    path.write_text(json.dumps(
        {"classes": classes, "empty_class": bank.empty_class}, indent=2))


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name)


def load_bank(path) -> TextBank:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    if "classes" not in doc:
        raise FormatError(f"{path}: bank JSON must contain a 'classes' list")
    entries = []
    for c in doc["classes"]:
        try:
            emb = load_plane(path.parent / c["embedding_path"])
            emb = np.atleast_2d(emb)
            entries.append(TextBankEntry(c["class"], list(c["prompts"]), emb))
        except KeyError as e:
            raise FormatError(f"{path}: bank entry missing field {e}") from e
    return TextBank(entries, empty_class=doc.get("empty_class", "empty"))


# ---------------------------------------------------------------------------
# Previews: 8-bit binary PGM (P5) / PPM (P6).
# ---------------------------------------------------------------------------

def write_pgm(path, gray: np.ndarray) -> None:
    """Write an (H, W) array already scaled to [0, 255]."""
    g = np.clip(np.asarray(gray), 0, 255).astype(np.uint8)
    if g.ndim != 2:
        raise InvalidInputError("PGM wants a 2-D array")
    with open(path, "wb") as f:
        f.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        f.write(g.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) array with values in [0, 1]."""
    a = np.asarray(rgb, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidInputError("PPM wants an (H, W, 3) array")
    b = np.clip(a * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        f.write(b.tobytes())


def depth_preview(path, depth: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Min-max normalized depth preview; invalid pixels are black."""
    d = np.asarray(depth, dtype=np.float64)
    v = np.ones(d.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    out = np.zeros(d.shape)
    if np.any(v):
        lo, hi = d[v].min(), d[v].max()
        span = hi - lo if hi > lo else 1.0
        out[v] = 1.0 + 254.0 * (d[v] - lo) / span
    write_pgm(path, out)
