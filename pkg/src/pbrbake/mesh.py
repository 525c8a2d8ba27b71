"""Triangle mesh loading, validation, and normalization.

Meshes carry per-vertex positions/normals and per-corner (face-varying)
UVs so atlas seams survive loading. Supported formats: OBJ (read/write)
and glTF 2.0 (.gltf / .glb, first primitive only, read).
"""

import base64
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateMesh, MissingUVs, ParseError

_GLTF_COMPONENT = {
    5120: ("b", 1), 5121: ("B", 1), 5122: ("h", 2),
    5123: ("H", 2), 5125: ("I", 4), 5126: ("f", 4),
}
_GLTF_NCOMP = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh with a UV atlas.

    vertices: (V,3) float64, normals: (V,3) unit float64,
    uvs: (F,3,2) per-corner coordinates in [0,1]^2, triangles: (F,3) int32.
    Immutable after construction; safe to share across threads.
    """

    vertices: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def validate(self):
        if self.num_triangles == 0:
            raise DegenerateMesh("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= self.num_vertices:
            raise ParseError("triangle index out of range")
        if self.uvs.shape != (self.num_triangles, 3, 2):
            raise MissingUVs("per-corner UV array has wrong shape")
        if np.any(self.uvs < 0.0) or np.any(self.uvs > 1.0):
            raise ParseError("UVs outside [0,1] after wrapping")
        lengths = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-4):
            raise ParseError("non-unit vertex normals")
        return self


def wrap_uvs(uvs):
    """Wrap UVs into [0,1] by fractional part; in-range values untouched."""
    uvs = np.asarray(uvs, dtype=np.float64)
    out = uvs.copy()
    outside = (uvs < 0.0) | (uvs > 1.0)
    out[outside] = uvs[outside] - np.floor(uvs[outside])
    return out


def compute_vertex_normals(vertices, triangles):
    """Area-weighted vertex normals (cross products sum unnormalized)."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n = np.zeros_like(v)
    for c in range(3):
        np.add.at(n, t[:, c], fn)
    return _renormalize(n)


def normalize(mesh: Mesh) -> Mesh:
    """Center the bounding box at origin and scale max extent to 1."""
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateMesh("zero-extent bounding box")
    center = (lo + hi) / 2.0
    verts = (mesh.vertices - center) / extent
    return replace(mesh, vertices=verts)


def _renormalize(normals):
    lens = np.linalg.norm(normals, axis=1)
    zero = lens == 0.0
    if zero.any():
        # unused or fully degenerate vertices: any unit vector will do
        normals = normals.copy()
        normals[zero] = [0.0, 0.0, 1.0]
        lens = np.where(zero, 1.0, lens)
    return normals / lens[:, None]


def load_mesh(path, fmt=None) -> Mesh:
    """Load and validate a mesh; format inferred from extension if omitted."""
    path = Path(path)
    if fmt is None:
        ext = path.suffix.lower()
        fmt = {"obj": "obj", ".obj": "obj", ".gltf": "gltf", ".glb": "gltf"}.get(ext)
        if fmt is None:
            raise ParseError(f"cannot infer mesh format from {path.name}")
    if fmt == "obj":
        mesh = _load_obj(path)
    elif fmt == "gltf":
        mesh = _load_gltf(path)
    else:
        raise ParseError(f"unsupported format {fmt!r}")
    return mesh.validate()


def _load_obj(path) -> Mesh:
    positions, texcoords, normals = [], [], []
    faces = []  # list of (vidx, vtidx, vnidx) triples per corner
    text = Path(path).read_text()  # propagate OSError for I/O exit codes
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                texcoords.append([float(x) for x in parts[1:3]])
            elif tag == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                corners = []
                for p in parts[1:]:
                    sub = p.split("/")
                    vi = int(sub[0])
                    vti = int(sub[1]) if len(sub) > 1 and sub[1] else 0
                    vni = int(sub[2]) if len(sub) > 2 and sub[2] else 0
                    corners.append((vi, vti, vni))
                # fan-triangulate polygons
                for k in range(1, len(corners) - 1):
                    faces.append([corners[0], corners[k], corners[k + 1]])
        except (ValueError, IndexError) as e:
            raise ParseError(f"{path}:{lineno}: {line!r}") from e
    if not faces:
        raise DegenerateMesh("OBJ contains no faces")
    if not texcoords:
        raise MissingUVs("OBJ has no vt records")
    positions = np.asarray(positions, dtype=np.float64)
    texcoords = np.asarray(texcoords, dtype=np.float64)

    def _res(idx, count):
        return idx - 1 if idx > 0 else count + idx

    tris = np.empty((len(faces), 3), dtype=np.int32)
    uvs = np.empty((len(faces), 3, 2), dtype=np.float64)
    vn_accum = np.zeros((len(positions), 3), dtype=np.float64) if normals else None
    for f, corners in enumerate(faces):
        for c, (vi, vti, vni) in enumerate(corners):
            vi = _res(vi, len(positions))
            tris[f, c] = vi
            if vti == 0:
                raise MissingUVs(f"face {f} has a corner without a vt index")
            uvs[f, c] = texcoords[_res(vti, len(texcoords))]
            if vni != 0 and vn_accum is not None:
                vn_accum[vi] += np.asarray(normals[_res(vni, len(normals))])
    if vn_accum is not None and np.any(np.linalg.norm(vn_accum, axis=1) > 0):
        # collapse per-corner normals to per-vertex by accumulation
        zero = np.linalg.norm(vn_accum, axis=1) == 0.0
        if zero.any():
            vn_accum[zero] = compute_vertex_normals(positions, tris)[zero]
        vnorm = _renormalize(vn_accum)
    else:
        vnorm = compute_vertex_normals(positions, tris)
    return Mesh(positions, vnorm, wrap_uvs(uvs), tris, name=Path(path).stem)


def save_obj(mesh: Mesh, path):
    """Write OBJ with one vt per corner so positions/UVs/indices round-trip."""
    lines = []
    for p in mesh.vertices:
        lines.append("v %.17g %.17g %.17g" % tuple(p))
    for n in mesh.normals:
        lines.append("vn %.17g %.17g %.17g" % tuple(n))
    for uv3 in mesh.uvs:
        for uv in uv3:
            lines.append("vt %.17g %.17g" % tuple(uv))
    for f, tri in enumerate(mesh.triangles):
        idx = [(int(tri[c]) + 1, 3 * f + c + 1) for c in range(3)]
        lines.append("f " + " ".join(f"{vi}/{ti}/{vi}" for vi, ti in idx))
    Path(path).write_text("\n".join(lines) + "\n")


def _load_gltf(path) -> Mesh:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ParseError(str(e)) from e
    if raw[:4] == b"glTF":
        doc, bin_chunk = _parse_glb(raw)
    else:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid glTF JSON: {e}") from e
        bin_chunk = None
    buffers = []
    for buf in doc.get("buffers", []):
        uri = buf.get("uri")
        if uri is None:
            if bin_chunk is None:
                raise ParseError("glTF buffer without uri and no GLB chunk")
            buffers.append(bin_chunk)
        elif uri.startswith("data:"):
            buffers.append(base64.b64decode(uri.split(",", 1)[1]))
        else:
            buffers.append((path.parent / uri).read_bytes())

    def read_accessor(idx):
        acc = doc["accessors"][idx]
        view = doc["bufferViews"][acc["bufferView"]]
        fmt, csize = _GLTF_COMPONENT[acc["componentType"]]
        ncomp = _GLTF_NCOMP[acc["type"]]
        offset = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        stride = view.get("byteStride") or csize * ncomp
        data = buffers[view["buffer"]]
        out = np.empty((acc["count"], ncomp), dtype=np.float64)
        for i in range(acc["count"]):
            vals = struct.unpack_from("<" + fmt * ncomp, data, offset + i * stride)
            out[i] = vals
        return out

    meshes = doc.get("meshes")
    if not meshes:
        raise DegenerateMesh("glTF contains no meshes")
    prim = meshes[0]["primitives"][0]
    attrs = prim["attributes"]
    if "POSITION" not in attrs:
        raise ParseError("glTF primitive lacks POSITION")
    positions = read_accessor(attrs["POSITION"])
    if "TEXCOORD_0" not in attrs:
        raise MissingUVs("glTF primitive lacks TEXCOORD_0")
    uv_per_vertex = read_accessor(attrs["TEXCOORD_0"])
    if "indices" in prim:
        indices = read_accessor(prim["indices"]).astype(np.int64).ravel()
    else:
        indices = np.arange(len(positions), dtype=np.int64)
    if len(indices) % 3 != 0 or len(indices) == 0:
        raise DegenerateMesh("glTF index count not a multiple of 3")
    tris = indices.reshape(-1, 3).astype(np.int32)
    uvs = wrap_uvs(uv_per_vertex[tris])
    if "NORMAL" in attrs:
        vnorm = _renormalize(read_accessor(attrs["NORMAL"]))
    else:
        vnorm = compute_vertex_normals(positions, tris)
    return Mesh(positions, vnorm, uvs, tris, name=path.stem)


def _parse_glb(raw):
    if len(raw) < 12:
        raise ParseError("truncated GLB header")
    magic, version, _length = struct.unpack_from("<4sII", raw, 0)
    if magic != b"glTF" or version != 2:
        raise ParseError("not a glTF 2.0 binary")
    offset = 12
    doc, bin_chunk = None, None
    while offset + 8 <= len(raw):
        clen, ctype = struct.unpack_from("<II", raw, offset)
        chunk = raw[offset + 8 : offset + 8 + clen]
        if ctype == 0x4E4F534A:  # 'JSON'
            doc = json.loads(chunk)
        elif ctype == 0x004E4942:  # 'BIN'
            bin_chunk = chunk
        offset += 8 + clen
    if doc is None:
        raise ParseError("GLB missing JSON chunk")
    return doc, bin_chunk
