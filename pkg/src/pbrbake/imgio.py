"""Image I/O helpers: PNG (8/16-bit), Radiance HDR / EXR, sRGB conversion.

All in-memory images are float arrays in linear space unless noted; sRGB
conversion happens only at the 8-bit PNG boundary.
"""

import json
import os
from pathlib import Path

import numpy as np

os.environ.setdefault("OPENCV_IO_ENABLE_OPENEXR", "1")
import cv2  # noqa: E402
from PIL import Image  # noqa: E402


def linear_to_srgb(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def save_png(path, image, srgb=True, alpha=None):
    """Save a float image in [0,1] as 8-bit PNG. `image` is HxW or HxWx3."""
    arr = np.asarray(image, dtype=np.float64)
    if srgb:
        arr = linear_to_srgb(arr)
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if alpha is not None:
        a = np.clip(np.round(np.asarray(alpha, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        arr = np.concatenate([arr, a[..., None]], axis=-1)
    Image.fromarray(arr).save(str(path))


def load_png(path, srgb=True):
    """Load a PNG as float in [0,1]; returns (image, alpha_or_None)."""
    im = Image.open(str(path))
    arr = np.asarray(im)
    alpha = None
    if arr.ndim == 3 and arr.shape[2] == 4:
        alpha = arr[..., 3].astype(np.float64) / 255.0
        arr = arr[..., :3]
    if arr.dtype == np.uint16:
        out = arr.astype(np.float64) / 65535.0
    else:
        out = arr.astype(np.float64) / 255.0
    if srgb:
        out = srgb_to_linear(out)
    return out, alpha


def save_png16(path, image):
    """Save a single-channel float image in [0,1] as 16-bit PNG."""
    arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 65535.0), 0, 65535)
    Image.fromarray(arr.astype(np.uint16)).save(str(path))


def load_png16(path):
    arr = np.asarray(Image.open(str(path)))
    return arr.astype(np.float64) / 65535.0


def save_depth(path, depth, background=np.inf):
    """Write a depth map as normalized 16-bit PNG plus a JSON sidecar.

    Normalization is (d - dmin) / (dmax - dmin) over finite pixels; the
    sidecar stores dmin/dmax so the map is invertible. Background pixels
    are written as 0 and flagged via the mask in the sidecar-adjacent PNG.
    """
    path = Path(path)
    d = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(d)
    if finite.any():
        dmin = float(d[finite].min())
        dmax = float(d[finite].max())
    else:
        dmin, dmax = 0.0, 1.0
    scale = (dmax - dmin) if dmax > dmin else 1.0
    norm = np.zeros_like(d)
    norm[finite] = (d[finite] - dmin) / scale
    save_png16(path, norm)
    sidecar = {"dmin": dmin, "dmax": dmax, "background": "infinity"}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_depth(path):
    """Inverse of save_depth; background pixels come back as +inf."""
    path = Path(path)
    norm = load_png16(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    d = meta["dmin"] + norm * (meta["dmax"] - meta["dmin"])
    return d, meta


# --- OpenEXR (scanline, uncompressed, 32-bit float) ------------------------
#
# The OpenCV build available here ships without the EXR codec, so EXR files
# are written and read directly. Only the subset this package produces is
# supported: single-part scanline images, NO_COMPRESSION, FLOAT channels.

_EXR_MAGIC = b"\x76\x2f\x31\x01"


def _exr_attr(name, typ, data):
    import struct

    return name + b"\x00" + typ + b"\x00" + struct.pack("<i", len(data)) + data


def save_exr(path, image):
    """Write an HxW or HxWx3 float image as an uncompressed float32 EXR."""
    import struct

    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    names = [b"Y"] if c == 1 else [b"B", b"G", b"R"]  # stored alphabetically
    planes = [arr[..., 0]] if c == 1 else [arr[..., 2], arr[..., 1], arr[..., 0]]

    chlist = b""
    for n in names:
        chlist += n + b"\x00" + struct.pack("<i", 2)  # pixel type FLOAT
        chlist += struct.pack("<BBBB", 0, 0, 0, 0)    # pLinear + reserved
        chlist += struct.pack("<ii", 1, 1)            # x/y sampling
    chlist += b"\x00"

    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header = _EXR_MAGIC + struct.pack("<i", 2)
    header += _exr_attr(b"channels", b"chlist", chlist)
    header += _exr_attr(b"compression", b"compression", b"\x00")
    header += _exr_attr(b"dataWindow", b"box2i", box)
    header += _exr_attr(b"displayWindow", b"box2i", box)
    header += _exr_attr(b"lineOrder", b"lineOrder", b"\x00")
    header += _exr_attr(b"pixelAspectRatio", b"float", struct.pack("<f", 1.0))
    header += _exr_attr(b"screenWindowCenter", b"v2f", struct.pack("<ff", 0.0, 0.0))
    header += _exr_attr(b"screenWindowWidth", b"float", struct.pack("<f", 1.0))
    header += b"\x00"

    row_bytes = w * len(names) * 4
    offset = len(header) + 8 * h
    offsets = struct.pack("<%dQ" % h, *range(offset, offset + h * (8 + row_bytes),
                                             8 + row_bytes))
    rows = bytearray()
    for y in range(h):
        rows += struct.pack("<ii", y, row_bytes)
        for p in planes:
            rows += np.ascontiguousarray(p[y], dtype="<f4").tobytes()
    Path(path).write_bytes(header + offsets + rows)


def load_exr(path):
    """Read an EXR written by save_exr (uncompressed scanline float32)."""
    import struct

    from .errors import ParseError

    buf = Path(path).read_bytes()
    if buf[:4] != _EXR_MAGIC:
        raise ParseError(f"{path}: not an EXR file")
    pos = 8
    attrs = {}
    while buf[pos] != 0:
        end = buf.index(b"\x00", pos)
        name = buf[pos:end].decode()
        pos = end + 1
        end = buf.index(b"\x00", pos)
        typ = buf[pos:end].decode()
        pos = end + 1
        (size,) = struct.unpack_from("<i", buf, pos)
        pos += 4
        attrs[name] = (typ, buf[pos:pos + size])
        pos += size
    pos += 1  # header terminator

    if attrs["compression"][1] != b"\x00":
        raise ParseError(f"{path}: only uncompressed EXR is supported")
    x0, y0, x1, y1 = struct.unpack("<iiii", attrs["dataWindow"][1])
    w, h = x1 - x0 + 1, y1 - y0 + 1

    chans = []
    ch = attrs["channels"][1]
    cpos = 0
    while ch[cpos] != 0:
        cend = ch.index(b"\x00", cpos)
        cname = ch[cpos:cend].decode()
        (ptype,) = struct.unpack_from("<i", ch, cend + 1)
        if ptype != 2:
            raise ParseError(f"{path}: only FLOAT channels are supported")
        chans.append(cname)
        cpos = cend + 1 + 16
    pos += 8 * h  # skip the scanline offset table

    out = np.empty((h, w, len(chans)), dtype=np.float64)
    for _ in range(h):
        y, nbytes = struct.unpack_from("<ii", buf, pos)
        pos += 8
        row = np.frombuffer(buf, dtype="<f4", count=w * len(chans), offset=pos)
        pos += nbytes
        out[y - y0] = row.reshape(len(chans), w).T
    # channels are stored alphabetically (B, G, R) -> reorder to RGB
    order = sorted(range(len(chans)), key=lambda i: chans[i], reverse=True)
    out = out[..., order]
    return out[..., 0] if len(chans) == 1 else out


def load_hdr(path):
    """Load a Radiance .hdr or EXR environment image as linear RGB float."""
    if str(path).lower().endswith(".exr"):
        return load_exr(path)
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FileNotFoundError(path)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., :3][..., ::-1].copy()
    return arr


def save_hdr(path, image):
    arr = np.asarray(image, dtype=np.float32)[..., ::-1]
    cv2.imwrite(str(path), arr.copy())
