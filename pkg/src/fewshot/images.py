"""PPM image I/O, bilinear resizing, and deterministic augmentation.

PPM (P6, 8-bit) is the mandatory on-disk format; PNG decoding is optional
and only available when Pillow is importable (see `png_supported`).
Images in memory are float arrays [3, H, W] with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ImageFormatError, ImageTruncatedError


def png_supported() -> bool:
    try:
        import PIL.Image  # noqa: F401
        return True
    except ImportError:
        return False


# -- PPM codec ---------------------------------------------------------------

def _read_header_tokens(blob: bytes, count: int, start: int):
    """Read whitespace-separated integer tokens, skipping '#' comments."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        tok = bytearray()
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            tok += blob[pos:pos + 1]
            pos += 1
        if not tok:
            raise ImageFormatError("header ended before all fields were read")
        try:
            tokens.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"non-numeric header field {bytes(tok)!r}") from None
    return tokens, pos


def decode_ppm(blob: bytes) -> np.ndarray:
    """P6 bytes -> float32 [3, H, W] in [0, 1]."""
    if blob[:2] != b"P6":
        raise ImageFormatError("not a P6 PPM file")
    try:
        (w, h, maxval), pos = _read_header_tokens(blob, 3, 2)
    except ImageFormatError:
        raise
    if w < 1 or h < 1:
        raise ImageFormatError(f"invalid dimensions {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images supported, got maxval {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    payload = blob[pos:pos + need]
    if len(payload) < need:
        raise ImageTruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def encode_ppm(image: np.ndarray) -> bytes:
    """Float [3, H, W] in [0, 1] -> P6 bytes."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected image [3,H,W], got shape {image.shape}")
    quant = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape[1], image.shape[2]
    return b"P6\n%d %d\n255\n" % (w, h) + quant.transpose(1, 2, 0).tobytes()


def read_image_file(path, allow_png: bool = False) -> np.ndarray:
    p = str(path)
    if p.lower().endswith(".png"):
        if not allow_png:
            raise DataError(f"PNG support is disabled (enable allow_png): {p}")
        if not png_supported():
            raise DataError("PNG requested but Pillow is not installed")
        import PIL.Image
        with PIL.Image.open(p) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr.transpose(2, 0, 1)
    with open(p, "rb") as f:
        return decode_ppm(f.read())


def write_ppm(path, image: np.ndarray):
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


# -- resize -------------------------------------------------------------------

def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel centers and edge clamping."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    def _axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = (src - i0).astype(image.dtype)
        return i0, i1, frac

    r0, r1, fr = _axis_coords(h, out_h)
    rows = image[:, r0, :] * (1 - fr)[None, :, None] + image[:, r1, :] * fr[None, :, None]
    c0, c1, fc = _axis_coords(w, out_w)
    return rows[:, :, c0] * (1 - fc)[None, None, :] + rows[:, :, c1] * fc[None, None, :]


def load_image(path, target_size: int, allow_png: bool = False) -> np.ndarray:
    """Decode and bilinear-resize to [3, target_size, target_size]."""
    img = read_image_file(path, allow_png=allow_png)
    return bilinear_resize(img, target_size, target_size)


# -- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentOp:
    """One augmentation step. `lo`/`hi` bound the drawn factor for
    brightness and scale; `angles` and `jitter` parameterize rotation
    (quarter turns are exact, jittered angles use nearest-neighbor);
    `prob` is the chance the op fires at all."""

    kind: str
    lo: float = 1.0
    hi: float = 1.0
    angles: tuple = (90.0, 180.0, 270.0)
    jitter: float = 15.0
    prob: float = 1.0


def brightness_op(lo: float = 0.7, hi: float = 1.3, prob: float = 1.0) -> AugmentOp:
    return AugmentOp(kind="brightness", lo=lo, hi=hi, prob=prob)


def scale_op(lo: float = 0.8, hi: float = 1.2, prob: float = 1.0) -> AugmentOp:
    return AugmentOp(kind="scale", lo=lo, hi=hi, prob=prob)


def rotate_op(angles: tuple = (90.0, 180.0, 270.0), jitter: float = 15.0, prob: float = 1.0) -> AugmentOp:
    return AugmentOp(kind="rotate", angles=angles, jitter=jitter, prob=prob)


def mirror_op(prob: float = 1.0) -> AugmentOp:
    return AugmentOp(kind="mirror", prob=prob)


def default_augment_ops():
    """The standard train-time pipeline: brightness, scaling, rotation,
    horizontal mirroring."""
    return (brightness_op(), scale_op(), rotate_op(), mirror_op(prob=0.5))


def _rotate_quarter(image: np.ndarray, quarter_turns: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(image, k=quarter_turns % 4, axes=(1, 2)))


def _rotate_nearest(image: np.ndarray, degrees: float) -> np.ndarray:
    c, h, w = image.shape
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse mapping: rotate output coords back into the source frame
    src_y = np.cos(theta) * yy + np.sin(theta) * xx + cy
    src_x = -np.sin(theta) * yy + np.cos(theta) * xx + cx
    iy = np.clip(np.rint(src_y).astype(np.int64), 0, h - 1)
    ix = np.clip(np.rint(src_x).astype(np.int64), 0, w - 1)
    return image[:, iy, ix]


def _zoom(image: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image
    c, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_y = np.clip((np.arange(h) - cy) / factor + cy, 0.0, h - 1.0)
    src_x = np.clip((np.arange(w) - cx) / factor + cx, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = (src_y - y0).astype(image.dtype)
    x0 = np.floor(src_x).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = (src_x - x0).astype(image.dtype)
    rows = image[:, y0, :] * (1 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]


def apply_augment_op(image: np.ndarray, op: AugmentOp, rng: np.random.Generator) -> np.ndarray:
    if op.prob < 1.0 and rng.random() >= op.prob:
        return image
    if op.kind == "brightness":
        factor = rng.uniform(op.lo, op.hi) if op.lo != op.hi else op.lo
        if factor == 1.0:
            return image
        return np.clip(image * np.asarray(factor, dtype=image.dtype), 0.0, 1.0)
    if op.kind == "scale":
        factor = rng.uniform(op.lo, op.hi) if op.lo != op.hi else op.lo
        return np.clip(_zoom(image, factor), 0.0, 1.0)
    if op.kind == "rotate":
        if op.angles and op.jitter > 0:
            use_quarter = rng.random() < 0.5
        else:
            use_quarter = bool(op.angles)
        if use_quarter:
            deg = float(op.angles[rng.integers(0, len(op.angles))]) if len(op.angles) > 1 else float(op.angles[0])
        else:
            deg = float(rng.uniform(-op.jitter, op.jitter))
        deg = deg % 360.0
        if deg == 0.0:
            return image
        if deg in (90.0, 180.0, 270.0):
            return _rotate_quarter(image, int(deg) // 90)
        return np.clip(_rotate_nearest(image, deg), 0.0, 1.0)
    if op.kind == "mirror":
        return np.ascontiguousarray(image[:, :, ::-1])
    raise DataError(f"unknown augment kind {op.kind!r}")


def augment(image: np.ndarray, ops, rng: np.random.Generator) -> np.ndarray:
    """Apply ops in order; deterministic given the rng state."""
    out = image
    for op in ops:
        out = apply_augment_op(out, op, rng)
    return out
