"""Minimal PLY reader/writer for point clouds and triangle meshes.

Reads ASCII and binary little-endian PLY. Writes binary little-endian only,
with a fixed property order, so identical inputs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoFailure, MissingFile

_PLY_TO_NUMPY = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}

_NUMPY_TO_PLY = {
    "u1": "uchar",
    "i4": "int",
    "u4": "uint",
    "f4": "float",
    "f8": "double",
    "i8": "int",  # downcast on write
}


class _Element:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        # scalar props: (name, np type str); list props: (name, count type, item type)
        self.scalars: list[tuple[str, str]] = []
        self.lists: list[tuple[str, str, str]] = []
        self.order: list[tuple[str, str]] = []  # ("scalar"|"list", name)


def _parse_header(fh) -> tuple[list[_Element], str]:
    line = fh.readline().strip()
    if line != b"ply":
        raise IoFailure("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[_Element] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise IoFailure("unexpected end of PLY header")
        line = raw.decode("ascii", errors="replace").strip()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] == "comment" or parts[0] == "obj_info":
            continue
        if parts[0] == "format":
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise IoFailure(f"unsupported PLY format: {fmt}")
        elif parts[0] == "element":
            elements.append(_Element(parts[1], int(parts[2])))
        elif parts[0] == "property":
            if not elements:
                raise IoFailure("property before element in PLY header")
            el = elements[-1]
            if parts[1] == "list":
                ct, it, name = parts[2], parts[3], parts[4]
                el.lists.append((name, _PLY_TO_NUMPY[ct], _PLY_TO_NUMPY[it]))
                el.order.append(("list", name))
            else:
                name = parts[2]
                el.scalars.append((name, _PLY_TO_NUMPY[parts[1]]))
                el.order.append(("scalar", name))
    if fmt is None:
        raise IoFailure("PLY header missing format line")
    return elements, fmt


def _read_binary_element(fh, el: _Element) -> dict[str, np.ndarray]:
    if not el.lists:
        dtype = np.dtype([(n, "<" + t) for n, t in el.scalars])
        buf = fh.read(dtype.itemsize * el.count)
        if len(buf) != dtype.itemsize * el.count:
            raise IoFailure(f"truncated PLY element '{el.name}'")
        rec = np.frombuffer(buf, dtype=dtype, count=el.count)
        return {n: rec[n].copy() for n, _ in el.scalars}
    # Elements with list properties are read row by row (faces are small).
    out_lists: dict[str, list] = {n: [] for n, _, _ in el.lists}
    out_scalars: dict[str, list] = {n: [] for n, _ in el.scalars}
    scalar_types = dict(el.scalars)
    list_types = {n: (ct, it) for n, ct, it in el.lists}
    for _ in range(el.count):
        for kind, name in el.order:
            if kind == "scalar":
                t = np.dtype("<" + scalar_types[name])
                out_scalars[name].append(np.frombuffer(fh.read(t.itemsize), dtype=t)[0])
            else:
                ct, it = list_types[name]
                ctd = np.dtype("<" + ct)
                n_items = int(np.frombuffer(fh.read(ctd.itemsize), dtype=ctd)[0])
                itd = np.dtype("<" + it)
                vals = np.frombuffer(fh.read(itd.itemsize * n_items), dtype=itd)
                out_lists[name].append(np.asarray(vals))
    result: dict[str, np.ndarray] = {}
    for n, t in el.scalars:
        result[n] = np.asarray(out_scalars[n], dtype=t)
    for n, _, it in el.lists:
        rows = out_lists[n]
        if rows and all(len(r) == len(rows[0]) for r in rows):
            result[n] = np.asarray(rows, dtype=it)
        else:
            result[n] = np.asarray(rows, dtype=object)
    return result


def _read_ascii_element(lines: list[str], el: _Element) -> dict[str, np.ndarray]:
    result_rows: dict[str, list] = {name: [] for _, name in el.order}
    for row in lines:
        tokens = row.split()
        pos = 0
        for kind, name in el.order:
            if kind == "scalar":
                result_rows[name].append(tokens[pos])
                pos += 1
            else:
                n_items = int(tokens[pos])
                result_rows[name].append(tokens[pos + 1 : pos + 1 + n_items])
                pos += 1 + n_items
    result: dict[str, np.ndarray] = {}
    scalar_types = dict(el.scalars)
    for n, t in el.scalars:
        result[n] = np.asarray(result_rows[n], dtype=scalar_types[n])
    for n, _, it in el.lists:
        rows = result_rows[n]
        if rows and all(len(r) == len(rows[0]) for r in rows):
            result[n] = np.asarray(rows, dtype=it)
        else:
            result[n] = np.asarray(rows, dtype=object)
    return result


def read_ply(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Read a PLY file into {element name: {property name: array}}."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        elements, fmt = _parse_header(fh)
        out: dict[str, dict[str, np.ndarray]] = {}
        if fmt == "binary_little_endian":
            for el in elements:
                out[el.name] = _read_binary_element(fh, el)
        else:
            text = fh.read().decode("ascii", errors="replace").splitlines()
            text = [ln for ln in text if ln.strip()]
            cursor = 0
            for el in elements:
                out[el.name] = _read_ascii_element(text[cursor : cursor + el.count], el)
                cursor += el.count
    return out


def write_ply(
    path: str | Path,
    vertex_props: dict[str, np.ndarray],
    faces: np.ndarray | None = None,
    comments: tuple[str, ...] = (),
) -> None:
    """Write a binary little-endian PLY.

    vertex_props maps property name to a 1-D array; all must share a length.
    Property order follows dict insertion order. Faces, if given, are an
    (n, 3) integer array written as a uchar-count int list.
    """
    path = Path(path)
    names = list(vertex_props)
    if not names:
        raise IoFailure("write_ply requires at least one vertex property")
    count = len(vertex_props[names[0]])
    cols = []
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {count}")
    for name in names:
        arr = np.asarray(vertex_props[name])
        if arr.ndim != 1 or len(arr) != count:
            raise IoFailure(f"vertex property '{name}' must be 1-D of length {count}")
        code = arr.dtype.str.lstrip("<>|=")
        if code == "i8":
            arr = arr.astype("<i4")
            code = "i4"
        if code not in _NUMPY_TO_PLY:
            raise IoFailure(f"unsupported dtype for PLY property '{name}': {arr.dtype}")
        header.append(f"property {_NUMPY_TO_PLY[code]} {name}")
        cols.append((name, arr.astype("<" + code)))
    if faces is not None:
        faces = np.ascontiguousarray(np.asarray(faces, dtype="<i4"))
        header.append(f"element face {len(faces)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")

    rec_dtype = np.dtype([(name, arr.dtype) for name, arr in cols])
    rec = np.empty(count, dtype=rec_dtype)
    for name, arr in cols:
        rec[name] = arr
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(rec.tobytes())
            if faces is not None and len(faces):
                face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (faces.shape[1],))])
                frec = np.empty(len(faces), dtype=face_dtype)
                frec["n"] = faces.shape[1]
                frec["idx"] = faces
                fh.write(frec.tobytes())
    except OSError as exc:
        raise IoFailure(f"failed writing {path}: {exc}") from exc
