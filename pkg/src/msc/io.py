"""Point cloud file I/O: PLY (ascii / binary little-endian) and mscb.

mscb layout (all little-endian):
    magic "MSCB" | u32 version=1 | u64 n | u8 flags |
    f64 positions n*3 | f64 colors n*3 | [f64 normals n*3] | u32 origin_index n
flags bit0 = normals present. Blocks are stored as float64 so that
save -> load is the identity on every field.

PLY: vertex element with float x/y/z, red/green/blue as uchar or float,
optional float nx/ny/nz. Byte colors are divided by 255 on load; the writer
emits uchar colors (clamped to [0,255]) and float32 geometry.

Parse failures raise :class:`ParseError` naming the byte offset.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import DataError, ParseError

MSCB_MAGIC = b"MSCB"
MSCB_VERSION = 1

FORMATS = ("ply-ascii", "ply-binary-le", "mscb")

_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def save_cloud(cloud: PointCloud, path, fmt: str) -> None:
    """Write ``cloud`` to ``path`` in the requested format."""
    path = Path(path)
    if fmt == "mscb":
        _save_mscb(cloud, path)
    elif fmt == "ply-ascii":
        _save_ply(cloud, path, binary=False)
    elif fmt == "ply-binary-le":
        _save_ply(cloud, path, binary=True)
    else:
        raise DataError(f"unknown format {fmt!r}")


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read a cloud; ``fmt=None`` sniffs mscb magic vs PLY (either flavor)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == MSCB_MAGIC if fmt is None else fmt == "mscb":
        return _load_mscb(data)
    if fmt in (None, "ply-ascii", "ply-binary-le"):
        return _load_ply(data, fmt)
    raise DataError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------- mscb

def _save_mscb(cloud: PointCloud, path: Path) -> None:
    flags = 1 if cloud.normals is not None else 0
    parts = [
        MSCB_MAGIC,
        struct.pack("<IQB", MSCB_VERSION, cloud.n, flags),
        cloud.positions.astype("<f8").tobytes(),
        cloud.colors.astype("<f8").tobytes(),
    ]
    if cloud.normals is not None:
        parts.append(cloud.normals.astype("<f8").tobytes())
    parts.append(cloud.origin_index.astype("<u4").tobytes())
    path.write_bytes(b"".join(parts))


def _load_mscb(data: bytes) -> PointCloud:
    if data[:4] != MSCB_MAGIC:
        raise ParseError("bad mscb magic", 0)
    try:
        version, n, flags = struct.unpack_from("<IQB", data, 4)
    except struct.error:
        raise ParseError("truncated mscb header", len(data))
    if version != MSCB_VERSION:
        raise ParseError(f"unsupported mscb version {version}", 4)
    off = 4 + 13
    has_normals = bool(flags & 1)
    need = off + n * 3 * 8 * (3 if has_normals else 2) + n * 4
    if len(data) < need:
        raise ParseError(f"mscb payload truncated (need {need} bytes)", len(data))

    def block(count, dtype, width):
        nonlocal off
        a = np.frombuffer(data, dtype=dtype, count=count * width, offset=off)
        off += a.nbytes
        return a.reshape(count, width) if width > 1 else a

    pos = block(n, "<f8", 3).astype(np.float64)
    col = block(n, "<f8", 3).astype(np.float64)
    nrm = block(n, "<f8", 3).astype(np.float64) if has_normals else None
    oi = block(n, "<u4", 1).astype(np.int64)
    if not np.all(np.isfinite(pos)):
        raise ParseError("non-finite position values", 4 + 13)
    return PointCloud(positions=pos, colors=col, normals=nrm, origin_index=oi).validate()


# ----------------------------------------------------------------- PLY

def _save_ply(cloud: PointCloud, path: Path, binary: bool) -> None:
    has_normals = cloud.normals is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {cloud.n}")
    header += ["property float x", "property float y", "property float z"]
    if has_normals:
        header += ["property float nx", "property float ny", "property float nz"]
    header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    pos = cloud.positions.astype("<f4")
    col = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype("u1")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if has_normals:
                nrm = cloud.normals.astype("<f4")
                rec = np.empty(
                    cloud.n,
                    dtype=[("p", "<f4", 3), ("nrm", "<f4", 3), ("c", "u1", 3)],
                )
                rec["nrm"] = nrm
            else:
                rec = np.empty(cloud.n, dtype=[("p", "<f4", 3), ("c", "u1", 3)])
            rec["p"] = pos
            rec["c"] = col
            f.write(rec.tobytes())
        else:
            for i in range(cloud.n):
                fields = [f"{v:.9g}" for v in pos[i]]
                if has_normals:
                    fields += [f"{v:.9g}" for v in cloud.normals[i].astype(np.float32)]
                fields += [str(int(v)) for v in col[i]]
                f.write((" ".join(fields) + "\n").encode("ascii"))


def _parse_ply_header(data: bytes):
    """Returns (is_binary, n, properties, body_offset)."""
    if not data.startswith(b"ply"):
        raise ParseError("not a PLY file (missing 'ply' magic)", 0)
    off = 0
    lines = []
    while True:
        nl = data.find(b"\n", off)
        if nl < 0:
            raise ParseError("unterminated PLY header", len(data))
        line = data[off:nl].strip().decode("ascii", errors="replace")
        lines.append((line, off))
        off = nl + 1
        if line == "end_header":
            break
    is_binary = None
    n = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line, lo in lines[1:]:
        toks = line.split()
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "format":
            if toks[1] == "ascii":
                is_binary = False
            elif toks[1] == "binary_little_endian":
                is_binary = True
            else:
                raise ParseError(f"unsupported PLY format {toks[1]!r}", lo)
        elif toks[0] == "element":
            if toks[1] == "vertex":
                in_vertex = True
                try:
                    n = int(toks[2])
                except (IndexError, ValueError):
                    raise ParseError("bad vertex count", lo)
            else:
                if in_vertex and props:
                    in_vertex = False
                if toks[1] != "vertex" and n is None:
                    raise ParseError("first element must be vertex", lo)
                in_vertex = False
        elif toks[0] == "property" and in_vertex:
            if toks[1] == "list":
                raise ParseError("list properties unsupported for vertices", lo)
            if toks[1] not in _PLY_TYPES:
                raise ParseError(f"unknown property type {toks[1]!r}", lo)
            props.append((toks[2], _PLY_TYPES[toks[1]]))
        elif line == "end_header":
            break
    if is_binary is None or n is None:
        raise ParseError("PLY header missing format or vertex element", 0)
    return is_binary, n, props, off


def _load_ply(data: bytes, fmt: str | None) -> PointCloud:
    is_binary, n, props, body = _parse_ply_header(data)
    if fmt == "ply-ascii" and is_binary:
        raise ParseError("expected ascii PLY, found binary", 0)
    if fmt == "ply-binary-le" and not is_binary:
        raise ParseError("expected binary PLY, found ascii", 0)
    names = [p[0] for p in props]
    for want in ("x", "y", "z", "red", "green", "blue"):
        if want not in names:
            raise ParseError(f"vertex property {want!r} missing", 0)
    for axis in ("x", "y", "z"):
        if props[names.index(axis)][1] not in ("f4", "f8"):
            raise ParseError(f"property {axis!r} must be float", 0)
    color_dt = props[names.index("red")][1]
    if color_dt not in ("u1", "f4", "f8"):
        raise ParseError("color properties must be uchar or float", 0)
    has_normals = all(k in names for k in ("nx", "ny", "nz"))

    if is_binary:
        dtype = np.dtype([(name, "<" + dt) for name, dt in props])
        need = body + n * dtype.itemsize
        if len(data) < need:
            raise ParseError(f"binary PLY truncated (need {need} bytes)", len(data))
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=body)
    else:
        rows = []
        off = body
        for i in range(n):
            nl = data.find(b"\n", off)
            chunk = data[off:] if nl < 0 else data[off:nl]
            if not chunk.strip():
                raise ParseError(f"ascii PLY truncated at vertex {i}", off)
            toks = chunk.split()
            if len(toks) != len(props):
                raise ParseError(
                    f"vertex {i}: expected {len(props)} values, got {len(toks)}", off
                )
            try:
                rows.append([float(t) for t in toks])
            except ValueError:
                raise ParseError(f"vertex {i}: non-numeric value", off)
            off = len(data) if nl < 0 else nl + 1
        arr = np.asarray(rows, dtype=np.float64).reshape(n, len(props))
        rec = {name: arr[:, k] for k, (name, _) in enumerate(props)}

    def col_of(name):
        return np.asarray(rec[name], dtype=np.float64)

    pos = np.stack([col_of("x"), col_of("y"), col_of("z")], axis=1)
    col = np.stack([col_of("red"), col_of("green"), col_of("blue")], axis=1)
    if color_dt == "u1":
        col = col / 255.0
    nrm = None
    if has_normals:
        nrm = np.stack([col_of("nx"), col_of("ny"), col_of("nz")], axis=1)
        norms = np.sqrt(np.sum(nrm * nrm, axis=1))
        bad = norms <= 0
        if np.any(bad):
            raise ParseError("zero-length normal in PLY", body)
        nrm = nrm / norms[:, None]
    if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(col)):
        raise ParseError("non-finite values in PLY body", body)
    col = np.clip(col, 0.0, 1.0)
    return PointCloud(positions=pos, colors=col, normals=nrm).validate()


# ------------------------------------------------- named-array container
# Shared by checkpoints and the subprocess array protocol. Little-endian:
# magic "MSCA" | u32 abi | u32 count | entries of
#   u16 name_len | name | u8 dtype | u8 ndim | u64 dims... | payload

MSCA_MAGIC = b"MSCA"
ABI_VERSION = 1

_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8", 3: "u1", 4: "<u4"}


def save_arrays(path_or_file, arrays: dict[str, np.ndarray]) -> None:
    buf = pack_arrays(arrays)
    if hasattr(path_or_file, "write"):
        path_or_file.write(buf)
    else:
        Path(path_or_file).write_bytes(buf)


def pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MSCA_MAGIC, struct.pack("<II", ABI_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.bool_:
            arr = arr.astype("u1")
        elif arr.dtype.kind == "i" and arr.dtype != np.int64:
            arr = arr.astype("<i8")
        code = None
        for c, dt in _DTYPES.items():
            if arr.dtype == np.dtype(dt):
                code = c
                break
        if code is None:
            raise DataError(f"array {name!r}: unsupported dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def load_arrays(path_or_file) -> dict[str, np.ndarray]:
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        data = Path(path_or_file).read_bytes()
    return unpack_arrays(data)


def unpack_arrays(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MSCA_MAGIC:
        raise ParseError("bad array container magic", 0)
    abi, count = struct.unpack_from("<II", data, 4)
    if abi != ABI_VERSION:
        raise ParseError(f"array container ABI {abi} != {ABI_VERSION}", 4)
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            if code not in _DTYPES:
                raise ParseError(f"array {name!r}: unknown dtype code {code}", off)
            dt = np.dtype(_DTYPES[code])
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(data, dtype=dt, count=size, offset=off).reshape(shape)
            off += size * dt.itemsize
            out[name] = arr
    except struct.error:
        raise ParseError("truncated array container", off)
    return out
