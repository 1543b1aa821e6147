"""Grey-scale image primitives shared by every stage.

Images are plain ``numpy`` arrays of shape ``(height, width)`` with values in
``[0, 1]``. ``TactileImage``, ``DepthMap`` and ``SaliencyMap`` are aliases that
only document intent.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GrayImage = np.ndarray
TactileImage = GrayImage
DepthMap = GrayImage
SaliencyMap = GrayImage

MIN_SIDE = 8


class ShapeError(ValueError):
    pass


class PGMError(ValueError):
    pass


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {img.shape}")
    if min(img.shape) < MIN_SIDE:
        raise ShapeError(f"{name} sides must be >= {MIN_SIDE}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img


def overlay(target: DepthMap, noise: DepthMap) -> DepthMap:
    """Pixel-wise sum of two depth maps, saturating at 1."""
    target = np.asarray(target, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if target.shape != noise.shape:
        raise ShapeError(f"shape mismatch: {target.shape} vs {noise.shape}")
    return np.minimum(1.0, target + noise)


def minmax_normalize(c: DepthMap) -> SaliencyMap:
    """Linearly rescale ``c`` onto ``[0, 1]``; a constant map becomes all zeros."""
    c = np.asarray(c, dtype=np.float64)
    lo, hi = c.min(), c.max()
    if hi <= lo:
        return np.zeros_like(c)
    return (c - lo) / (hi - lo)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    rotation: int = 0
    translation: tuple[int, int] = (0, 0)
    fill: float = 0.0

    def validate(self, width: int, height: int) -> None:
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be a right angle, got {self.rotation}")
        dx, dy = self.translation
        if abs(dx) > width // 4 or abs(dy) > height // 4:
            raise ValueError(f"translation {self.translation} exceeds a quarter of the image")
        if not 0.0 <= self.fill <= 1.0:
            raise ValueError(f"fill must be in [0, 1], got {self.fill}")


def _shift(img: np.ndarray, dx: int, dy: int, fill: float) -> np.ndarray:
    # dx > 0 moves content right, dy > 0 moves content down
    out = np.full_like(img, fill)
    h, w = img.shape
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def augment(img: GrayImage, p: AugmentParams) -> GrayImage:
    """Apply flips, then a counter-clockwise right-angle rotation, then a shift."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    p.validate(w, h)
    out = img
    if p.hflip:
        out = out[:, ::-1]
    if p.vflip:
        out = out[::-1, :]
    if p.rotation:
        out = np.rot90(out, k=p.rotation // 90)
    dx, dy = p.translation
    if dx or dy:
        out = _shift(out, dx, dy, p.fill)
    return np.ascontiguousarray(out)


def augment_inverse(img: GrayImage, p: AugmentParams) -> GrayImage:
    """Undo :func:`augment`; pixels shifted out of frame come back as ``p.fill``."""
    out = np.asarray(img, dtype=np.float64)
    dx, dy = p.translation
    if dx or dy:
        out = _shift(out, -dx, -dy, p.fill)
    if p.rotation:
        out = np.rot90(out, k=-(p.rotation // 90))
    if p.vflip:
        out = out[::-1, :]
    if p.hflip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def random_augment_params(rng: np.random.Generator, width: int, height: int | None = None,
                          fill: float = 0.0) -> AugmentParams:
    height = width if height is None else height
    mx, my = width // 4, height // 4
    return AugmentParams(
        hflip=bool(rng.integers(2)),
        vflip=bool(rng.integers(2)),
        rotation=int(rng.integers(4)) * 90,
        translation=(int(rng.integers(-mx, mx + 1)), int(rng.integers(-my, my + 1))),
        fill=fill,
    )


def quantize(img: GrayImage) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def encode_pgm(img: GrayImage) -> bytes:
    """Binary 8-bit PGM (P5) with ``q = round(255 v)``."""
    img = check_image(img)
    h, w = img.shape
    return f"P5 {w} {h} 255\n".encode("ascii") + quantize(img).tobytes()


_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")


def decode_pgm(data: bytes) -> GrayImage:
    if not data.startswith(b"P5"):
        raise PGMError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMError("malformed PGM header")
        try:
            fields.append(int(m.group(2)))
        except ValueError as exc:
            raise PGMError(f"malformed PGM header field {m.group(2)!r}") from exc
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise PGMError("malformed PGM header terminator")
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0 or maxval != 255:
        raise PGMError(f"unsupported PGM geometry/maxval: {w}x{h}, {maxval}")
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise PGMError(f"truncated PGM payload: expected {w * h} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_pgm(path: str | Path, img: GrayImage) -> None:
    Path(path).write_bytes(encode_pgm(img))


def load_pgm(path: str | Path) -> GrayImage:
    return decode_pgm(Path(path).read_bytes())


def save_png(path: str | Path, img: GrayImage) -> None:
    """Lossless grey-scale PNG mirror of a map, for eyeballing."""
    import matplotlib.image as mpimg

    mpimg.imsave(str(path), check_image(img), cmap="gray", vmin=0.0, vmax=1.0)
