"""PFM (float) and 8-bit PNG image I/O."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .brdf import linear_to_display
from .errors import FormatError

_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", re.DOTALL)


def write_pfm(path, img) -> None:
    """Write an (H, W) or (H, W, 3) image as little-endian PFM.

    Rows are stored bottom-to-top as the format requires. Two-channel images
    are padded with a zero third channel.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 2:
        img = np.concatenate([img, np.zeros_like(img[..., :1])], axis=2)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"cannot store array of shape {img.shape} as PFM")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise FormatError(f"{path}: bad PFM scale field") from None
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[m.end():]
    count = w * h * channels
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated PFM ({len(body)} of {4 * count} bytes)")
    arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return arr.reshape(shape)[::-1].copy()


def write_mask_png(path, mask) -> None:
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8)).save(path)


def read_mask_png(path) -> np.ndarray:
    try:
        arr = np.asarray(Image.open(path))
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 127


def write_preview_png(path, linear_img) -> None:
    """Display-space 8-bit preview of a linear image."""
    img = linear_to_display(np.clip(np.asarray(linear_img, np.float64), 0.0, None))
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img).save(path)
