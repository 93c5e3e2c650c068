"""Point-cloud file formats: ASCII XYZ, ASCII PLY and a packed binary container.

Packed binary layout (little endian)::

    b"PCDS"  u32 version  u32 cloud_count  u32 K
    cloud_count * K * 3 float32 (cloud-major, xyz per point)
    u32 CRC-32 of every preceding byte

A JSON manifest can sit next to a packed file as ``<path>.json``.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import Dataset, normalize
from .errors import ChecksumError, FormatError, NonFiniteError, PointCountError

PACKED_MAGIC = b"PCDS"
PACKED_VERSION = 1
ASCII_XYZ = "xyz"
ASCII_PLY = "ply"
PACKED = "packed"
FORMATS = (ASCII_XYZ, ASCII_PLY, PACKED)


def _finite(arr, path):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{path}: non-finite coordinate")
    return arr


# ---------------------------------------------------------------- XYZ

def write_xyz(path, cloud):
    np.savetxt(path, np.asarray(cloud, dtype=np.float64), fmt="%.9g")


def read_xyz(path):
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise FormatError(f"{path}: no points")
    if arr.shape[1] != 3:
        raise FormatError(f"{path}: expected 3 values per line, found {arr.shape[1]}")
    return _finite(arr, path)


# ---------------------------------------------------------------- PLY

def write_ply(path, cloud):
    cloud = np.asarray(cloud, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        np.savetxt(fh, cloud, fmt="%.9g")


def read_ply(path):
    """ASCII PLY reader. Only the vertex x, y, z properties are used."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing 'ply' magic line")
    elements = []  # (name, count, [property names])
    fmt = None
    i = 1
    while True:
        if i >= len(lines):
            raise FormatError(f"{path}: header has no end_header")
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3:
                raise FormatError(f"{path}: malformed element line {lines[i - 1]!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[-1]))
            else:
                elements[-1][2].append(("scalar", tok[-1]))
        else:
            raise FormatError(f"{path}: unknown header line {lines[i - 1]!r}")
    if fmt != "ascii":
        raise FormatError(f"{path}: only ASCII PLY is supported (format {fmt!r})")
    body = lines[i:]
    row = 0
    verts = None
    for name, count, props in elements:
        block = body[row:row + count]
        if len(block) < count:
            raise FormatError(f"{path}: file ends inside element {name!r}")
        row += count
        if name != "vertex":
            continue
        names = [p[1] for p in props]
        if any(kind == "list" for kind, _ in props):
            raise FormatError(f"{path}: list properties on vertices are not supported")
        try:
            cols = [names.index(c) for c in ("x", "y", "z")]
        except ValueError as exc:
            raise FormatError(f"{path}: vertex element lacks x/y/z") from exc
        try:
            table = np.array([[float(v) for v in ln.split()] for ln in block], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: bad vertex value") from exc
        if count and table.shape[1] != len(names):
            raise FormatError(f"{path}: vertex rows do not match the header")
        verts = table[:, cols] if count else np.zeros((0, 3))
    if verts is None:
        raise FormatError(f"{path}: no vertex element")
    return _finite(verts, path)


# ---------------------------------------------------------------- packed binary

def packed_bytes(clouds):
    clouds = np.asarray(clouds, dtype="<f4")
    if clouds.ndim != 3 or clouds.shape[2] != 3:
        raise FormatError("packed clouds must be [count, K, 3]")
    body = PACKED_MAGIC + struct.pack("<III", PACKED_VERSION, clouds.shape[0], clouds.shape[1])
    body += np.ascontiguousarray(clouds).tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_packed(path, clouds):
    with open(path, "wb") as fh:
        fh.write(packed_bytes(clouds))


def read_packed(path):
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != PACKED_MAGIC:
        raise FormatError(f"{path}: not a packed cloud file")
    version, count, k = struct.unpack_from("<III", data, 4)
    if version != PACKED_VERSION:
        raise FormatError(f"{path}: unsupported packed version {version}")
    expected = 16 + count * k * 12 + 4
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != struct.unpack("<I", data[-4:])[0]:
        raise ChecksumError(f"{path}: CRC-32 mismatch")
    arr = np.frombuffer(data, dtype="<f4", count=count * k * 3, offset=16)
    return _finite(arr.reshape(count, k, 3).astype(np.float32), path)


def manifest_path(path):
    return f"{path}.json"


def save_dataset(path, ds):
    """Packed binary plus a JSON manifest (labels, split, provenance)."""
    write_packed(path, ds.clouds)
    meta = dict(ds.manifest)
    meta["labels"] = None if ds.labels is None else ds.labels.tolist()
    meta["split"] = None if ds.split is None else ds.split.tolist()
    with open(manifest_path(path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------- loading

def _expand(path, ext):
    if isinstance(path, (list, tuple)):
        return [str(p) for p in path]
    if os.path.isdir(path):
        files = sorted(str(p) for p in Path(path).iterdir() if p.suffix.lower() == f".{ext}")
        if not files:
            raise FormatError(f"{path}: no .{ext} files found")
        return files
    return [str(path)]


def detect_format(path):
    p = str(path[0] if isinstance(path, (list, tuple)) else path).lower()
    if p.endswith(".ply"):
        return ASCII_PLY
    if p.endswith(".xyz") or p.endswith(".txt"):
        return ASCII_XYZ
    if os.path.isdir(p):
        names = os.listdir(p)
        if any(n.lower().endswith(".ply") for n in names):
            return ASCII_PLY
        return ASCII_XYZ
    return PACKED


def load_clouds(path, fmt=None, K=None, normalized=False):
    """Load a dataset. ``path`` is a packed file, one ASCII file, a list of
    ASCII files or a directory of them. Every cloud must have exactly ``K``
    points (``K`` defaults to the first cloud's size); nothing is resampled.
    """
    fmt = fmt or detect_format(path)
    if fmt not in FORMATS:
        raise FormatError(f"unknown format {fmt!r}")
    labels = split = None
    manifest = {"source": "file", "format": fmt}
    if fmt == PACKED:
        clouds = read_packed(path)
        if K is not None and clouds.shape[1] != K:
            raise PointCountError(f"{path}: clouds have {clouds.shape[1]} points, expected {K}")
        manifest["files"] = [str(path)]
        mpath = manifest_path(path)
        if os.path.exists(mpath):
            with open(mpath) as fh:
                meta = json.load(fh)
            labels, split = meta.pop("labels", None), meta.pop("split", None)
            manifest = dict(meta, source_file=str(path), format=fmt)
    else:
        reader = read_xyz if fmt == ASCII_XYZ else read_ply
        files = _expand(path, fmt)
        arrays = []
        for f in files:
            pts = reader(f)
            if K is None:
                K = pts.shape[0]
            if pts.shape[0] != K:
                raise PointCountError(f"{f}: has {pts.shape[0]} points, expected {K}")
            arrays.append(pts)
        clouds = np.stack(arrays).astype(np.float32)
        manifest["files"] = files
    if normalized:
        clouds = np.stack([normalize(c.astype(np.float64)) for c in clouds]).astype(np.float32)
        manifest["normalized"] = True
    else:
        manifest.setdefault("normalized", False)
    return Dataset(clouds, labels, split, manifest)
