"""Test fixtures: procedural assets with ground-truth materials and
deterministic local HTTP mocks for the judge, decomposer, and generator.

Nothing here talks to the network; servers bind to 127.0.0.1 on an
ephemeral port and are deterministic given their configuration.
"""

import base64
import io
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .bake import MaterialTextureSet, constant_material_set
from .imgio import srgb_to_linear
from .mesh import Mesh, compute_vertex_normals, normalize
from .raster import texel_centers_uv
from .shade import MaterialSample

# ---------------------------------------------------------------------------
# procedural assets


def _quad(center, size, axis_u, axis_v, uv_rect):
    """Two triangles spanning a quad; returns (verts, tris, uvs)."""
    c = np.asarray(center, dtype=np.float64)
    au = np.asarray(axis_u, dtype=np.float64) * size / 2.0
    av = np.asarray(axis_v, dtype=np.float64) * size / 2.0
    verts = np.stack([c - au - av, c + au - av, c + au + av, c - au + av])
    u0, v0, u1, v1 = uv_rect
    uv = np.array([[u0, v0], [u1, v0], [u1, v1], [u0, v1]])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uvs = uv[tris]
    return verts, tris, uvs


def _assemble(parts, name):
    verts, tris, uvs = [], [], []
    offset = 0
    for v, t, uv in parts:
        verts.append(v)
        tris.append(t + offset)
        uvs.append(uv)
        offset += len(v)
    verts = np.concatenate(verts)
    tris = np.concatenate(tris).astype(np.int32)
    uvs = np.concatenate(uvs)
    normals = compute_vertex_normals(verts, tris)
    return Mesh(verts, normals, uvs, tris, name=name)


_CUBE_FACES = [
    # (center axis, axis_u, axis_v)
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
    ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
    ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
]

_ATLAS_PAD = 0.02


def _atlas_rect(index, cols=3, rows=2):
    c, r = index % cols, index // cols
    return (c / cols + _ATLAS_PAD, r / rows + _ATLAS_PAD,
            (c + 1) / cols - _ATLAS_PAD, (r + 1) / rows - _ATLAS_PAD)


def make_cube(size=1.0, name="cube") -> Mesh:
    """Axis-aligned cube with 24 vertices and a non-overlapping box atlas."""
    parts = []
    for i, (n, au, av) in enumerate(_CUBE_FACES):
        parts.append(_quad(np.asarray(n) * size / 2.0, size, au, av, _atlas_rect(i)))
    mesh = _assemble(parts, name)
    # sharp-edged normals: use face normals per vertex (cube has split verts)
    fn = np.repeat(np.asarray([f[0] for f in _CUBE_FACES], dtype=np.float64), 4, axis=0)
    return Mesh(mesh.vertices, fn, mesh.uvs, mesh.triangles, name=name)


def make_uv_sphere(radius=0.5, rings=32, segments=64, name="sphere") -> Mesh:
    """Lat-long sphere; UVs are the (phi, theta) grid, so the atlas is
    bijective (the seam column and pole rows are duplicated)."""
    thetas = np.linspace(0.0, np.pi, rings + 1)
    phis = np.linspace(0.0, 2.0 * np.pi, segments + 1)
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    x = radius * np.sin(tt) * np.cos(pp)
    y = radius * np.cos(tt)
    z = radius * np.sin(tt) * np.sin(pp)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    uv_grid = np.stack([pp / (2.0 * np.pi), 1.0 - tt / np.pi], axis=-1).reshape(-1, 2)

    def vid(r, s):
        return r * (segments + 1) + s

    tris, uvs = [], []
    for r in range(rings):
        for s in range(segments):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s + 1), vid(r + 1, s)
            for tri in ([a, b, c], [a, c, d]):
                p = verts[tri]
                if np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) < 1e-14:
                    continue  # degenerate pole triangle
                tris.append(tri)
                uvs.append(uv_grid[tri])
    tris = np.asarray(tris, dtype=np.int32)
    uvs = np.asarray(uvs)
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return Mesh(verts, normals, uvs, tris, name=name)


def make_icosphere(radius=0.5, subdivisions=3, name="icosphere") -> Mesh:
    """Subdivided icosahedron (20 * 4^n faces); UVs from spherical coords."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache = {}
        verts = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
        verts = np.asarray(verts)
    verts = np.asarray(verts) * radius
    tris = np.asarray(faces, dtype=np.int32)
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    phi = (np.arctan2(verts[:, 2], verts[:, 0]) / (2 * np.pi) + 0.5) % 1.0
    theta = np.arccos(np.clip(verts[:, 1] / radius, -1, 1)) / np.pi
    uv_vert = np.stack([phi, 1.0 - theta], axis=-1)
    return Mesh(verts, normals, uv_vert[tris], tris, name=name)


def make_torus(major=0.35, minor=0.15, rings=48, segments=24, name="torus") -> Mesh:
    """Torus in the xz-plane; the (u,v) parameter grid is the UV atlas."""
    us = np.linspace(0.0, 2 * np.pi, rings + 1)
    vs = np.linspace(0.0, 2 * np.pi, segments + 1)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    cx = (major + minor * np.cos(vv))
    x = cx * np.cos(uu)
    z = cx * np.sin(uu)
    y = minor * np.sin(vv)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    centers = np.stack([major * np.cos(uu), np.zeros_like(uu), major * np.sin(uu)],
                       axis=-1).reshape(-1, 3)
    normals = verts - centers
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    uv_grid = np.stack([uu / (2 * np.pi), vv / (2 * np.pi)], axis=-1).reshape(-1, 2)

    def vid(r, s):
        return r * (segments + 1) + s

    tris, uvs = [], []
    for r in range(rings):
        for s in range(segments):
            a, b = vid(r, s), vid(r + 1, s)
            c, d = vid(r + 1, s + 1), vid(r, s + 1)
            for tri in ([a, b, c], [a, c, d]):
                tris.append(tri)
                uvs.append(uv_grid[tri])
    tris = np.asarray(tris, dtype=np.int32)
    return Mesh(verts, normals, np.asarray(uvs), tris, name=name)


OCCLUDER_INNER_RECT = (2.0 / 3.0 + _ATLAS_PAD, _ATLAS_PAD, 1.0 - _ATLAS_PAD, 0.5 - _ATLAS_PAD)


def make_occluder_pair(name="occluder_pair") -> Mesh:
    """A small quad sandwiched between two larger parallel occluder quads.

    The inner quad's texels are invisible from all 6 bundle views: the
    front/back views are blocked by the occluders and the side/top/bottom
    views see it edge-on (beyond the angle cutoff).
    """
    parts = [
        _quad((0, 0, 0.1), 0.9, (1, 0, 0), (0, 1, 0), _atlas_rect(0)),
        _quad((0, 0, -0.1), 0.9, (1, 0, 0), (0, 1, 0), _atlas_rect(1)),
        _quad((0, 0, 0.0), 0.3, (1, 0, 0), (0, 1, 0), OCCLUDER_INNER_RECT),
    ]
    mesh = _assemble(parts, name)
    fn = np.tile(np.array([0.0, 0.0, 1.0]), (mesh.num_vertices, 1))
    return Mesh(mesh.vertices, fn, mesh.uvs, mesh.triangles, name=name)


def procedural_material_maps(spec, texture_res):
    """Ground-truth UV maps from a material spec.

    spec: a MaterialSample for constant materials, or a tuple
    ("checker", cells) / ("gradient",) for procedural albedo patterns
    (metallic 0, roughness 1). Sampled at texel centers.
    """
    res = int(texture_res)
    if isinstance(spec, MaterialSample):
        return constant_material_set(res, spec.albedo, spec.metallic, spec.roughness)
    kind = spec[0]
    uv = texel_centers_uv(res)
    if kind == "checker":
        cells = spec[1] if len(spec) > 1 else 8
        parity = (np.floor(uv[..., 0] * cells) + np.floor(uv[..., 1] * cells)) % 2
        albedo = np.where(parity[..., None] > 0.5,
                          np.array([0.85, 0.85, 0.85]), np.array([0.15, 0.15, 0.15]))
    elif kind == "gradient":
        albedo = np.stack([
            0.3 + 0.4 * np.sin(2 * np.pi * uv[..., 0]) ** 2,
            0.3 + 0.4 * uv[..., 1],
            0.5 + 0.3 * np.cos(2 * np.pi * uv[..., 1]) * np.sin(np.pi * uv[..., 0]),
        ], axis=-1)
    else:
        raise ValueError(f"unknown material spec {spec!r}")
    return MaterialTextureSet(albedo=np.clip(albedo, 0, 1),
                              metallic=np.zeros((res, res)),
                              roughness=np.ones((res, res)),
                              coverage=np.ones((res, res), dtype=bool),
                              resolution=res)


def make_asset(kind, material_spec=None, texture_res=256):
    """Deterministic mesh plus ground-truth UV maps for testing."""
    if material_spec is None:
        material_spec = MaterialSample(albedo=np.array([0.5, 0.5, 0.5]),
                                       metallic=0.0, roughness=1.0)
    builders = {
        "sphere": make_uv_sphere,
        "cube": make_cube,
        "occluder_pair": make_occluder_pair,
        "torus": make_torus,
    }
    if kind not in builders:
        raise ValueError(f"unknown asset kind {kind!r}")
    mesh = normalize(builders[kind]())
    return mesh, procedural_material_maps(material_spec, texture_res)


# ---------------------------------------------------------------------------
# mock HTTP servers


def _decode_data_url(url):
    b64 = url.split(",", 1)[1]
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(b64))))
    out = arr.astype(np.float64) / 255.0
    return srgb_to_linear(out[..., :3] if out.ndim == 3 else out)


def _image_tokens(shape):
    h, w = shape[:2]
    return 85 + 170 * int(np.ceil(h * w / (512.0 * 512.0)))


class _MockServer:
    """Threaded local HTTP server wrapper."""

    def __init__(self, handler_cls):
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
        self._httpd.owner = self
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self._httpd.server_address[1]}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()


class _SilentHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length))

    def _send_json(self, obj, code=200):
        body = json.dumps(obj).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class MockMLLMServer(_MockServer):
    """Deterministic judge endpoint (chat-completions wire format).

    Policies: "fixed" replies with a constant text; "quality_encoding"
    scores 100 - k * mean-abs-distance to a registered reference image of
    the same shape (two stacked rows score one value per row); "scripted"
    replies from a list and returns HTTP 500 once exhausted.
    """

    def __init__(self, policy="fixed", fixed_text="Score: 87", references=(),
                 scripted=(), distance_gain=400.0):
        self.policy = policy
        self.fixed_text = fixed_text
        self.references = list(references)
        self.scripted = list(scripted)
        self.distance_gain = distance_gain
        self._script_lock = threading.Lock()
        self._script_index = 0
        super().__init__(_MLLMHandler)

    def register_reference(self, image):
        self.references.append(np.asarray(image, dtype=np.float64))

    def _score_against_reference(self, img):
        for ref in self.references:
            if ref.shape == img.shape:
                mad = float(np.abs(img - ref).mean())
                return max(0.0, 100.0 - self.distance_gain * mad)
        return 50.0

    def respond(self, text, image):
        if self.policy == "fixed":
            return self.fixed_text
        if self.policy == "scripted":
            with self._script_lock:
                if self._script_index >= len(self.scripted):
                    return None
                out = self.scripted[self._script_index]
                self._script_index += 1
                return out
        # quality_encoding
        for ref in self.references:
            if (img_rows := img_two_rows(image, ref)) is not None:
                sa = self._score_against_reference(img_rows[0])
                sb = self._score_against_reference(img_rows[1])
                return f"Method one: {sa:.2f}. Method two: {sb:.2f}."
        return f"Score: {self._score_against_reference(image):.2f}"


def img_two_rows(image, ref):
    """Split a 2x-height stitch into rows matching the reference shape."""
    if image.shape[0] == 2 * ref.shape[0] and image.shape[1:] == ref.shape[1:]:
        return image[: ref.shape[0]], image[ref.shape[0]:]
    return None


class _MLLMHandler(_SilentHandler):
    def do_POST(self):
        server: MockMLLMServer = self.server.owner
        payload = self._read_json()
        texts, image = [], None
        for part in payload["messages"][0]["content"]:
            if part["type"] == "text":
                texts.append(part["text"])
            elif part["type"] == "image_url":
                image = _decode_data_url(part["image_url"]["url"])
        text = "".join(texts)
        content = server.respond(text, image)
        if content is None:
            self._send_json({"error": "script exhausted"}, code=500)
            return
        usage = {
            "prompt_tokens": len(text) // 4 + (_image_tokens(image.shape) if image is not None else 0),
            "completion_tokens": max(1, len(content) // 4),
        }
        self._send_json({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": usage,
        })


class MockDecomposerServer(_MockServer):
    """Stand-in decomposer endpoint.

    mode "echo" returns albedo = shaded with constant metallic/roughness;
    mode "groundtruth" returns pre-registered per-view channel stacks;
    `drop_views` truncates the response for validation tests.
    """

    def __init__(self, mode="echo", albedo=None, metallic=None, roughness=None,
                 echo_metallic=0.0, echo_roughness=1.0, drop_views=0):
        self.mode = mode
        self.albedo = albedo
        self.metallic = metallic
        self.roughness = roughness
        self.echo_metallic = echo_metallic
        self.echo_roughness = echo_roughness
        self.drop_views = drop_views
        super().__init__(_DecomposerHandler)


class _DecomposerHandler(_SilentHandler):
    def do_POST(self):
        from .wire import decode_png_b64, encode_png_b64

        server: MockDecomposerServer = self.server.owner
        payload = self._read_json()
        views = payload["views"]
        out = []
        for i, v in enumerate(views):
            shaded = decode_png_b64(v, srgb=True)
            res = shaded.shape[0]
            if server.mode == "echo":
                albedo = shaded
                metallic = np.full((res, res), server.echo_metallic)
                roughness = np.full((res, res), server.echo_roughness)
            else:
                albedo = server.albedo[i]
                metallic = server.metallic[i]
                roughness = server.roughness[i]
            out.append({
                "albedo": encode_png_b64(albedo, srgb=True),
                "metallic": encode_png_b64(metallic, srgb=False),
                "roughness": encode_png_b64(roughness, srgb=False),
            })
        if server.drop_views:
            out = out[: len(out) - server.drop_views]
        self._send_json({"views": out})


class MockGeneratorServer(_MockServer):
    """Generation endpoint returning seed-perturbed copies of a base set."""

    def __init__(self, base_shaded, base_albedo):
        self.base_shaded = np.asarray(base_shaded, dtype=np.float64)
        self.base_albedo = np.asarray(base_albedo, dtype=np.float64)
        super().__init__(_GeneratorHandler)


class _GeneratorHandler(_SilentHandler):
    def do_POST(self):
        from .wire import encode_png_b64

        server: MockGeneratorServer = self.server.owner
        payload = self._read_json()
        seed = int(payload.get("seed", 0))
        # deterministic seed-dependent tint so candidates differ
        tint = 1.0 - 0.05 * (seed % 7) / 7.0
        out = []
        for i in range(6):
            out.append({
                "shaded": encode_png_b64(np.clip(server.base_shaded[i] * tint, 0, 1)),
                "albedo": encode_png_b64(np.clip(server.base_albedo[i] * tint, 0, 1)),
            })
        self._send_json({"views": out})
