"""PLY and OBJ mesh file I/O.

PLY carries per-vertex attributes as extra float properties. Vector-valued
attributes are stored as name_0, name_1, ... and regrouped on load. Writing
uses binary little-endian for compact, byte-stable output; reading supports
ascii and binary_little_endian.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh

_CORE_PROPS = ("x", "y", "z", "nx", "ny", "nz")

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "char": ("<i1", 1), "int8": ("<i1", 1),
    "short": ("<i2", 2), "int16": ("<i2", 2),
    "ushort": ("<u2", 2), "uint16": ("<u2", 2),
    "int": ("<i4", 4), "int32": ("<i4", 4),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
}


def save_ply(path, mesh: TriMesh) -> None:
    """Write a mesh (with normals and attributes) as binary little-endian PLY."""
    v = np.asarray(mesh.vertices, dtype=np.float64)
    has_normals = mesh.normals is not None
    columns = [("x", v[:, 0]), ("y", v[:, 1]), ("z", v[:, 2])]
    if has_normals:
        n = np.asarray(mesh.normals, dtype=np.float64)
        columns += [("nx", n[:, 0]), ("ny", n[:, 1]), ("nz", n[:, 2])]
    for name in sorted(mesh.attributes):
        ch = np.asarray(mesh.attributes[name], dtype=np.float64)
        if ch.ndim == 1:
            columns.append((name, ch))
        else:
            for k in range(ch.shape[1]):
                columns.append((f"{name}_{k}", ch[:, k]))

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {mesh.num_vertices}"]
    header += [f"property double {name}" for name, _ in columns]
    header += [f"element face {mesh.num_faces}",
               "property list uchar int vertex_indices", "end_header"]

    vdata = np.column_stack([c for _, c in columns]).astype("<f8")
    fcount = np.full((mesh.num_faces, 1), 3, dtype="<u1")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(vdata.tobytes())
        faces = np.asarray(mesh.faces, dtype="<i4")
        # interleave count byte and three int32 indices per face
        rec = np.zeros(mesh.num_faces, dtype=[("n", "<u1"), ("idx", "<i4", (3,))])
        rec["n"] = fcount[:, 0]
        rec["idx"] = faces
        f.write(rec.tobytes())


def load_ply(path) -> TriMesh:
    """Read an ascii or binary little-endian PLY into a TriMesh."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if end < 0:
        raise ValueError(f"not a PLY file: {path}")
    header = data[:end].decode("ascii").splitlines()
    body = data[end:]
    body = body[body.find(b"\n") + 1:]

    fmt = None
    elements = []  # (name, count, [(prop_name, type) or ('__list__', ...)])
    for line in header:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append(("__list__", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format: {fmt}")

    vertex_props: list[tuple[str, str]] = []
    vert_count = face_count = 0
    for name, count, props in elements:
        if name == "vertex":
            vert_count, vertex_props = count, props
        elif name == "face":
            face_count = count

    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        ncols = len(vertex_props)
        vvals = np.array(tokens[pos:pos + vert_count * ncols], dtype=np.float64)
        vvals = vvals.reshape(vert_count, ncols)
        pos += vert_count * ncols
        faces = np.zeros((face_count, 3), dtype=np.int32)
        for i in range(face_count):
            n = int(tokens[pos]); pos += 1
            if n != 3:
                raise ValueError("only triangle faces supported")
            faces[i] = [int(tokens[pos]), int(tokens[pos + 1]), int(tokens[pos + 2])]
            pos += 3
    else:
        dtypes = []
        for prop in vertex_props:
            if prop[0] == "__list__":
                raise ValueError("list property on vertex element not supported")
            dtypes.append((prop[0], _PLY_TYPES[prop[1]][0]))
        vrec = np.frombuffer(body, dtype=np.dtype(dtypes), count=vert_count)
        vvals = np.column_stack([vrec[name].astype(np.float64) for name, _ in dtypes])
        offset = np.dtype(dtypes).itemsize * vert_count
        frec = np.frombuffer(body, dtype=[("n", "<u1"), ("idx", "<i4", (3,))],
                             count=face_count, offset=offset)
        if face_count and (frec["n"] != 3).any():
            raise ValueError("only triangle faces supported")
        faces = frec["idx"].astype(np.int32)

    names = [p[0] for p in vertex_props]
    col = {name: vvals[:, i] for i, name in enumerate(names)}
    vertices = np.column_stack([col["x"], col["y"], col["z"]])
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = np.column_stack([col["nx"], col["ny"], col["nz"]])

    # regroup attr_0, attr_1, ... into vector channels
    attributes: dict[str, np.ndarray] = {}
    grouped: dict[str, list[tuple[int, np.ndarray]]] = {}
    for name in names:
        if name in _CORE_PROPS:
            continue
        if "_" in name and name.rsplit("_", 1)[1].isdigit():
            base, k = name.rsplit("_", 1)
            grouped.setdefault(base, []).append((int(k), col[name]))
        else:
            attributes[name] = col[name]
    for base, cols in grouped.items():
        cols.sort(key=lambda t: t[0])
        attributes[base] = np.column_stack([c for _, c in cols])

    return TriMesh(vertices, faces, normals, attributes)


def save_obj(path, mesh: TriMesh) -> None:
    """Write vertices/normals/faces as Wavefront OBJ (attributes are dropped)."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    has_normals = mesh.normals is not None
    if has_normals:
        for n in mesh.normals:
            lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for f in mesh.faces:
        a, b, c = int(f[0]) + 1, int(f[1]) + 1, int(f[2]) + 1
        if has_normals:
            lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
        else:
            lines.append(f"f {a} {b} {c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    vertices, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate
                    faces.append([idx[0], idx[k], idx[k + 1]])
    normals_arr = np.asarray(normals) if len(normals) == len(vertices) and normals else None
    return TriMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int32), normals_arr)
