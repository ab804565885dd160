"""Readers and writers for splat scenes, point clouds, labels and outputs.

Splat scenes and point clouds use binary little-endian PLY with a single
``vertex`` element of scalar properties. Splat files store scale as log and
opacity as a logit; loading converts both to linear/probability space.

Augmented clouds go into the ``G2PA`` container::

    b"G2PA" | u32 version_and_flags | u64 n
    n x 13 float32   position, color, normal, scale, opacity
    n x u8           bit0 matched, bit1 in_scale, bit2 in_sem, bit3 in_union
    [n x u16]        point labels, present iff header flag bit 0 is set

The low 16 bits of the second word hold the version (1) and the high 16 bits
hold header flags, so a label-free file reads as plain version 1.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.recfunctions import repack_fields

from .types import AugmentedCloud, BoundaryLabels, GaussianSet, PointCloud, ValidationError

log = logging.getLogger(__name__)

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}

SPLAT_REQUIRED = ("x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                  "rot_0", "rot_1", "rot_2", "rot_3")
SPLAT_CORE = set(SPLAT_REQUIRED)

MAGIC = b"G2PA"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
FLAG_LABELS = 1

BIT_MATCHED, BIT_SCALE, BIT_SEM, BIT_UNION = 1, 2, 4, 8


class SchemaError(ValidationError):
    """A file lacks required fields or uses an unsupported layout."""


@dataclass
class SplatFileHeader:
    count: int
    properties: list[tuple[str, str]]
    format: str = "binary_little_endian 1.0"
    comments: list[str] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.properties]

    def dtype(self) -> np.dtype:
        return np.dtype([(name, "<" + t) for name, t in self.properties])


def read_ply(path) -> tuple[SplatFileHeader, np.ndarray]:
    """Read the ``vertex`` element of a binary little-endian PLY file."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise SchemaError(f"{path}: not a PLY file")
        fmt, count, props, comments = None, None, [], []
        in_vertex = False
        while True:
            raw = f.readline()
            if not raw:
                raise SchemaError(f"{path}: header has no end_header")
            line = raw.decode("ascii", errors="replace").strip()
            if line == "end_header":
                break
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = " ".join(tok[1:])
            elif tok[0] == "comment":
                comments.append(line[len("comment"):].strip())
            elif tok[0] == "element":
                if count is not None and in_vertex:
                    in_vertex = False  # later elements are ignored
                    continue
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
                elif count is None:
                    raise SchemaError(f"{path}: element {tok[1]!r} precedes vertex element")
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise SchemaError(f"{path}: list property {tok[-1]!r} not supported in vertex element")
                if tok[1] not in PLY_TYPES:
                    raise SchemaError(f"{path}: unknown property type {tok[1]!r}")
                props.append((tok[2], PLY_TYPES[tok[1]]))
        if fmt != "binary_little_endian 1.0":
            raise SchemaError(f"{path}: unsupported format {fmt!r}; need binary_little_endian 1.0")
        if count is None:
            raise SchemaError(f"{path}: no vertex element")
        header = SplatFileHeader(count, props, fmt, comments)
        dt = header.dtype()
        buf = f.read(count * dt.itemsize)
    if len(buf) != count * dt.itemsize:
        raise ValidationError(
            f"{path}: header declares {count} records but only {len(buf) // max(dt.itemsize, 1)} present"
        )
    return header, np.frombuffer(buf, dtype=dt).copy()


def write_ply(path, data: np.ndarray, comments=()) -> None:
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {len(data)}")
    for name in data.dtype.names:
        base = data.dtype[name].str.lstrip("<>|=")
        lines.append(f"property {_PLY_NAMES[base]} {name}")
    lines.append("end_header")
    le = data.astype(data.dtype.newbyteorder("<"))
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(le.tobytes())


def _require(path, header: SplatFileHeader, names) -> None:
    missing = [n for n in names if n not in header.names]
    if missing:
        raise SchemaError(f"{path}: missing required properties: {', '.join(missing)}")


def _finite_rows(path, data: np.ndarray, names, strict: bool, report: dict | None) -> np.ndarray:
    cols = np.stack([data[n].astype(np.float64) for n in names], axis=1) if names else np.zeros((len(data), 0))
    ok = np.all(np.isfinite(cols), axis=1)
    bad = np.flatnonzero(~ok)
    if len(bad):
        if strict:
            raise ValidationError(f"{path}: non-finite field in record {int(bad[0])}")
        log.warning("%s: dropping %d records with non-finite fields (first: %d)", path, len(bad), bad[0])
    if report is not None:
        report["dropped"] = bad.tolist()
    return ok


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def load_splats(path, strict: bool = True, report: dict | None = None) -> GaussianSet:
    """Load a splat scene, converting log-scale and logit-opacity to linear space.

    Properties other than position/opacity/scale/rotation are kept verbatim in
    ``GaussianSet.extra``. In lenient mode records with NaN/Inf are dropped and
    their indices listed in ``report["dropped"]``.
    """
    header, data = read_ply(path)
    _require(path, header, SPLAT_REQUIRED)
    numeric = [n for n, t in header.properties if t.startswith("f")]
    ok = _finite_rows(path, data, numeric, strict, report)
    data = data[ok]
    q = np.stack([data[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    if np.any(np.linalg.norm(q, axis=1) == 0):
        raise ValidationError(f"{path}: zero-norm rotation quaternion")
    extra_names = [n for n in header.names if n not in SPLAT_CORE]
    extra = repack_fields(data[extra_names]) if extra_names else None
    return GaussianSet(
        np.stack([data["x"], data["y"], data["z"]], axis=1),
        q,
        np.exp(np.stack([data[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)),
        _sigmoid(data["opacity"].astype(np.float64)),
        extra,
        header,
    )


def write_splats(path, gaussians: GaussianSet, property_order=None) -> None:
    """Write a splat scene in stored (log-scale, logit-opacity) form.

    Property order follows ``property_order``, else the header the set was
    loaded with, else the conventional x,y,z,...,opacity,scale,rot layout.
    """
    n = len(gaussians)
    extra = gaussians.extra
    extra_names = list(extra.dtype.names) if extra is not None else []
    if property_order is None:
        header = gaussians.header
        if header is not None and set(header.names) == SPLAT_CORE | set(extra_names):
            property_order = header.names
        else:
            property_order = ["x", "y", "z"] + extra_names + [
                "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    dtypes = {n: "<f4" for n in SPLAT_CORE}
    if extra is not None:
        dtypes.update({nm: extra.dtype[nm].newbyteorder("<") for nm in extra_names})
    out = np.zeros(n, dtype=[(nm, dtypes[nm]) for nm in property_order])
    for i, axis in enumerate("xyz"):
        out[axis] = gaussians.centroids[:, i]
    with np.errstate(divide="ignore"):
        op = np.clip(gaussians.opacities, 0.0, 1.0)
        out["opacity"] = np.log(op) - np.log1p(-op)
    for i in range(3):
        out[f"scale_{i}"] = np.log(gaussians.scales[:, i])
    for i in range(4):
        out[f"rot_{i}"] = gaussians.rotations[:, i]
    for nm in extra_names:
        out[nm] = extra[nm]
    write_ply(path, out)


def load_labels(path, count: int | None = None) -> np.ndarray:
    """Sidecar labels: one little-endian u16 per point."""
    raw = Path(path).read_bytes()
    if len(raw) % 2:
        raise ValidationError(f"{path}: label file length {len(raw)} is not a multiple of 2")
    labels = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    if count is not None and len(labels) != count:
        raise ValidationError(f"{path}: {len(labels)} labels for {count} points")
    return labels


def save_labels(path, labels) -> None:
    y = np.asarray(labels)
    if len(y) and (y.min() < 0 or y.max() > 0xFFFF):
        raise ValidationError("labels must fit in u16")
    Path(path).write_bytes(y.astype("<u2").tobytes())


def load_points(path, labels_path=None, strict: bool = True, report: dict | None = None) -> PointCloud:
    """Load a point cloud: x,y,z plus optional red/green/blue, nx/ny/nz, label.

    u8 colors are rescaled to [0, 1]; float colors are taken as-is. Missing
    normals become zero vectors and are counted in ``report["missing_normals"]``.
    A sidecar label file, when given, overrides an embedded label property.
    """
    header, data = read_ply(path)
    _require(path, header, ("x", "y", "z"))
    names = header.names
    numeric = [n for n, t in header.properties if t.startswith("f")]
    ok = _finite_rows(path, data, numeric, strict, report)
    if labels_path is not None and not np.all(ok):
        raise ValidationError(f"{path}: cannot drop records when labels come from a sidecar file")
    data = data[ok]
    n = len(data)
    pos = np.stack([data["x"], data["y"], data["z"]], axis=1)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([data[c] for c in ("red", "green", "blue")], axis=1).astype(np.float64)
        if data.dtype["red"].kind == "u" and data.dtype["red"].itemsize == 1:
            colors /= 255.0
    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = np.stack([data[c] for c in ("nx", "ny", "nz")], axis=1)
    else:
        if n:
            log.warning("%s: no normals; %d points get zero normals", path, n)
        if report is not None:
            report["missing_normals"] = n
    labels = data["label"].astype(np.int64) if "label" in names else None
    if labels_path is not None:
        labels = load_labels(labels_path, n)
    return PointCloud(pos, colors, normals, labels)


def write_points(path, cloud: PointCloud, color_format: str = "u1", with_normals: bool = True) -> None:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    cf = "u1" if color_format == "u1" else "<f4"
    fields += [("red", cf), ("green", cf), ("blue", cf)]
    if with_normals:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if cloud.labels is not None:
        fields.append(("label", "<u2"))
    out = np.zeros(len(cloud), dtype=fields)
    for i, c in enumerate("xyz"):
        out[c] = cloud.positions[:, i]
    col = cloud.colors
    if cf == "u1":
        col = np.clip(np.rint(col * 255.0), 0, 255)
    for i, c in enumerate(("red", "green", "blue")):
        out[c] = col[:, i]
    if with_normals:
        for i, c in enumerate(("nx", "ny", "nz")):
            out[c] = cloud.normals[:, i]
    if cloud.labels is not None:
        out["label"] = cloud.labels
    write_ply(path, out)


def encode_flags(matched, boundary: BoundaryLabels | None = None) -> np.ndarray:
    flags = np.asarray(matched, dtype=np.uint8) * BIT_MATCHED
    if boundary is not None:
        flags = flags | (boundary.in_scale.astype(np.uint8) * BIT_SCALE)
        flags = flags | (boundary.in_sem.astype(np.uint8) * BIT_SEM)
        flags = flags | (boundary.in_union.astype(np.uint8) * BIT_UNION)
    return flags.astype(np.uint8)


def decode_flags(flags: np.ndarray) -> tuple[np.ndarray, BoundaryLabels]:
    f = np.asarray(flags, dtype=np.uint8)
    return (
        (f & BIT_MATCHED) > 0,
        BoundaryLabels((f & BIT_SCALE) > 0, (f & BIT_SEM) > 0, (f & BIT_UNION) > 0),
    )


def save_augmented(path, aug: AugmentedCloud, boundary: BoundaryLabels | None = None) -> None:
    n = len(aug)
    if boundary is not None and len(boundary) != n:
        raise ValidationError(f"{n} points but {len(boundary)} boundary labels")
    labels = aug.labels
    flags = FLAG_LABELS if labels is not None else 0
    parts = [
        HEADER.pack(MAGIC, VERSION | (flags << 16), n),
        aug.features().astype("<f4").tobytes(),
        encode_flags(aug.matched, boundary).tobytes(),
    ]
    if labels is not None:
        if n and (labels.min() < 0 or labels.max() > 0xFFFF):
            raise ValidationError("labels must fit in u16")
        parts.append(labels.astype("<u2").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_augmented(path) -> tuple[AugmentedCloud, BoundaryLabels]:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, word, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    version, flags = word & 0xFFFF, word >> 16
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported version {version}")
    has_labels = bool(flags & FLAG_LABELS)
    expected = HEADER.size + n * (13 * 4 + 1 + (2 if has_labels else 0))
    if len(raw) != expected:
        raise ValidationError(f"{path}: header declares {n} points; size {len(raw)} != {expected}")
    off = HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=13 * n, offset=off).reshape(n, 13)
    off += 13 * 4 * n
    flag_bytes = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    off += n
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64) if has_labels else None
    f = feats.astype(np.float64)
    cloud = PointCloud(f[:, 0:3], f[:, 3:6], f[:, 6:9], labels)
    matched, boundary = decode_flags(flag_bytes)
    return AugmentedCloud(cloud, f[:, 9:12], f[:, 12], matched), boundary


def save_boundary_flags(path, boundary: BoundaryLabels, matched=None) -> None:
    """Boundary export: one flag byte per point, same bit layout as G2PA."""
    if matched is None:
        matched = np.zeros(len(boundary), dtype=bool)
    Path(path).write_bytes(encode_flags(matched, boundary).tobytes())


def load_boundary_flags(path) -> tuple[np.ndarray, BoundaryLabels]:
    return decode_flags(np.frombuffer(Path(path).read_bytes(), dtype=np.uint8))
