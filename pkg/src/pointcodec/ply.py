"""PLY reader and writer (ascii and binary_little_endian)."""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_ALIASES = {
    "x": "x", "y": "y", "z": "z",
    "red": "red", "r": "red", "diffuse_red": "red",
    "green": "green", "g": "green", "diffuse_green": "green",
    "blue": "blue", "b": "blue", "diffuse_blue": "blue",
    "nx": "nx", "ny": "ny", "nz": "nz",
}


class PlyError(ValueError):
    """Malformed or unsupported PLY input; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.props = []  # (name, dtype) or (name, (count_dtype, item_dtype))

    @property
    def has_lists(self):
        return any(isinstance(t, tuple) for _, t in self.props)


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    end = data.find(b"end_header")
    if end < 0:
        raise PlyError("missing end_header", len(data))
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    offset = 0
    for raw in data[:body_start].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        if not words or words[0] in ("ply", "comment", "obj_info", "end_header"):
            pass
        elif words[0] == "format":
            if len(words) < 2:
                raise PlyError("bad format line", offset)
            fmt = words[1]
            if fmt == "binary_big_endian":
                raise PlyError("binary_big_endian is not supported", offset)
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unknown format {fmt!r}", offset)
        elif words[0] == "element":
            try:
                elements.append(_Element(words[1], int(words[2])))
            except (IndexError, ValueError):
                raise PlyError(f"bad element line {line!r}", offset) from None
        elif words[0] == "property":
            if not elements:
                raise PlyError("property before any element", offset)
            try:
                if words[1] == "list":
                    elements[-1].props.append((words[4], (_TYPES[words[2]], _TYPES[words[3]])))
                else:
                    elements[-1].props.append((words[2], _TYPES[words[1]]))
            except (IndexError, KeyError):
                raise PlyError(f"bad property line {line!r}", offset) from None
        else:
            raise PlyError(f"unexpected header line {line!r}", offset)
        offset += len(raw) + 1
    if fmt is None:
        raise PlyError("missing format line", 0)
    return fmt, elements, body_start


def _read_binary(data, elements, pos):
    tables = {}
    for el in elements:
        if not el.has_lists:
            dt = np.dtype([(n, "<" + t) for n, t in el.props])
            nbytes = dt.itemsize * el.count
            if pos + nbytes > len(data):
                raise PlyError(f"truncated body in element {el.name!r}", len(data))
            tables[el.name] = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            pos += nbytes
            continue
        # list properties force a per-row walk
        for _ in range(el.count):
            for _, t in el.props:
                if isinstance(t, tuple):
                    csize = np.dtype(t[0]).itemsize
                    if pos + csize > len(data):
                        raise PlyError(f"truncated body in element {el.name!r}", len(data))
                    n = int(np.frombuffer(data, dtype="<" + t[0], count=1, offset=pos)[0])
                    pos += csize + n * np.dtype(t[1]).itemsize
                else:
                    pos += np.dtype(t).itemsize
                if pos > len(data):
                    raise PlyError(f"truncated body in element {el.name!r}", len(data))
    return tables


def _read_ascii(data, elements, pos):
    lines = data[pos:].split(b"\n")
    offsets = np.cumsum([0] + [len(l) + 1 for l in lines]) + pos
    tables = {}
    row = 0
    for el in elements:
        if el.has_lists:
            row += el.count
            if row > len(lines):
                raise PlyError(f"truncated body in element {el.name!r}", len(data))
            continue
        rows = []
        for _ in range(el.count):
            # skip blank lines inside the body
            while row < len(lines) and not lines[row].strip():
                row += 1
            if row >= len(lines):
                raise PlyError(f"truncated body in element {el.name!r}", len(data))
            words = lines[row].split()
            if len(words) < len(el.props):
                raise PlyError(f"too few values in element {el.name!r}", int(offsets[row]))
            rows.append(words[: len(el.props)])
            row += 1
        arr = np.array(rows, dtype=object).reshape(el.count, len(el.props))
        dt = np.dtype([(n, t) for n, t in el.props])
        table = np.empty(el.count, dtype=dt)
        for j, (n, t) in enumerate(el.props):
            col = arr[:, j]
            if np.dtype(t).kind == "f":
                table[n] = col.astype(np.float64)
            else:
                table[n] = col.astype(np.int64)
        tables[el.name] = table
    return tables


def read_ply(data: bytes) -> PointCloud:
    """Parse PLY bytes into a :class:`PointCloud`."""
    fmt, elements, body = _parse_header(data)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise PlyError("no vertex element", 0)
    names = {_ALIASES.get(n, n): n for n, t in vertex.props if not isinstance(t, tuple)}
    if not all(k in names for k in "xyz"):
        raise PlyError("vertex element lacks x/y/z properties", 0)
    if vertex.has_lists:
        raise PlyError("list properties on vertex are not supported", 0)

    if fmt == "ascii":
        tables = _read_ascii(data, elements, body)
    else:
        tables = _read_binary(data, elements, body)
    v = tables["vertex"]

    kinds = {np.dtype(v.dtype[names[a]]).kind for a in "xyz"}
    pos_dtype = np.float64 if "f" in kinds else np.int64
    positions = np.stack([v[names[a]] for a in "xyz"], axis=1).astype(pos_dtype)
    colors = None
    if all(k in names for k in ("red", "green", "blue")):
        colors = np.stack([v[names[c]] for c in ("red", "green", "blue")], axis=1)
        if colors.dtype.kind == "f":
            colors = np.rint(colors)
        colors = np.clip(colors, 0, 255).astype(np.uint8)
    normals = None
    if all(k in names for k in ("nx", "ny", "nz")):
        normals = np.stack([v[names[c]] for c in ("nx", "ny", "nz")], axis=1).astype(np.float64)
    return PointCloud(positions, colors, normals)


def write_ply(cloud: PointCloud, mode: str = "binary-le") -> bytes:
    """Serialize ``cloud``; ``mode`` is ``"ascii"`` or ``"binary-le"``."""
    if mode not in ("ascii", "binary-le"):
        raise ValueError(f"unknown PLY mode {mode!r}")
    n = len(cloud)
    pos_t = ("int", "<i4") if cloud.is_integer else ("double", "<f8")
    fields = [(a, pos_t) for a in "xyz"]
    if cloud.normals is not None:
        fields += [(a, ("float", "<f4")) for a in ("nx", "ny", "nz")]
    if cloud.colors is not None:
        fields += [(c, ("uchar", "u1")) for c in ("red", "green", "blue")]
    fmt = "ascii" if mode == "ascii" else "binary_little_endian"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property {t[0]} {name}" for name, t in fields]
    header.append("end_header")
    out = ("\n".join(header) + "\n").encode("ascii")

    table = np.empty(n, dtype=[(name, t[1]) for name, t in fields])
    for j, a in enumerate("xyz"):
        table[a] = cloud.positions[:, j]
    if cloud.normals is not None:
        for j, a in enumerate(("nx", "ny", "nz")):
            table[a] = cloud.normals[:, j]
    if cloud.colors is not None:
        for j, c in enumerate(("red", "green", "blue")):
            table[c] = cloud.colors[:, j]

    if mode == "binary-le":
        return out + table.tobytes()
    # str() of a Python float is the shortest round-trip repr
    lines = [" ".join(str(v) for v in row) for row in table.tolist()]
    body = "\n".join(lines) + ("\n" if lines else "")
    return out + body.encode("ascii")
