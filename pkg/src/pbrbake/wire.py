"""Shared wire helpers: base64 PNG payloads and JSON-over-HTTP posts."""

import base64
import io

import numpy as np
import requests
from PIL import Image

from .errors import MalformedResponse, Timeout, Unreachable
from .imgio import linear_to_srgb, srgb_to_linear


def encode_png_b64(image, srgb=True):
    """Encode a float image in [0,1] (HxW or HxWx3) as base64 PNG text."""
    arr = np.asarray(image, dtype=np.float64)
    if srgb:
        arr = linear_to_srgb(arr)
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(data, srgb=True):
    try:
        raw = base64.b64decode(data)
        arr = np.asarray(Image.open(io.BytesIO(raw)))
    except Exception as e:
        raise MalformedResponse(f"invalid PNG payload: {e}") from e
    out = arr.astype(np.float64) / 255.0
    if srgb:
        out = srgb_to_linear(out)
    return out


def post_json(url, payload, timeout=60.0):
    """POST JSON, mapping transport failures onto pipeline exceptions."""
    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.exceptions.Timeout as e:
        raise Timeout(f"request to {url} timed out") from e
    except requests.exceptions.RequestException as e:
        raise Unreachable(f"cannot reach {url}: {e}") from e
    if resp.status_code != 200:
        raise MalformedResponse(f"{url} returned HTTP {resp.status_code}")
    try:
        return resp.json()
    except ValueError as e:
        raise MalformedResponse(f"{url} returned non-JSON body") from e
