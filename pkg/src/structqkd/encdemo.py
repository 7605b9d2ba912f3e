"""One-time-pad image demo over a d-level symbol channel.

Each 8-bit RGB channel value becomes one d-ary symbol, so a pixel costs three
photons and the rendered image has at most d**3 colours. Encryption adds a key
symbol modulo d. Channel noise is drawn from the same-basis block of a
detection matrix and applied to the transmitted (encrypted) symbols.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detection import DetectionMatrix
from .protocol import SiftResult
from .rng import stream

SUPPORTED_D = (2, 4)


@dataclass(frozen=True)
class SymbolImage:
    """Symbols of shape (height, width, 3) with values in [0, d)."""

    symbols: np.ndarray
    d: int

    def __post_init__(self):
        s = np.asarray(self.symbols)
        if s.ndim != 3 or s.shape[2] != 3:
            raise ValueError("symbols must have shape (height, width, 3)")
        if s.size and (s.min() < 0 or s.max() >= self.d):
            raise ValueError(f"symbols must lie in [0, {self.d})")
        object.__setattr__(self, "symbols", s.astype(np.int64))

    @property
    def height(self) -> int:
        return self.symbols.shape[0]

    @property
    def width(self) -> int:
        return self.symbols.shape[1]

    @property
    def size(self) -> int:
        return self.symbols.size

    def render(self) -> np.ndarray:
        """8-bit RGB image with each symbol at the centre of its level."""
        return np.round((self.symbols + 0.5) * 256.0 / self.d).astype(np.uint8)


@dataclass(frozen=True)
class KeyStream:
    symbols: np.ndarray
    d: int
    source: str = "seeded"

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int64).ravel()
        if s.size and (s.min() < 0 or s.max() >= self.d):
            raise ValueError(f"key symbols must lie in [0, {self.d})")
        object.__setattr__(self, "symbols", s)

    def __len__(self):
        return self.symbols.size

    @classmethod
    def seeded(cls, n: int, d: int, seed: int) -> KeyStream:
        """Uniform key from a deterministic generator (stand-in for a distilled key)."""
        return cls(stream(seed, "key").integers(0, d, n), d, f"seed={seed}")

    @classmethod
    def from_sift(cls, sifted: SiftResult, d: int, n: int | None = None) -> KeyStream:
        """Alice's sifted symbols as key material (optionally truncated to ``n``)."""
        s = np.asarray(sifted.pairs[:, 0], dtype=np.int64)
        if n is not None:
            if len(s) < n:
                raise ValueError(f"only {len(s)} sifted symbols, need {n}")
            s = s[:n]
        return cls(s, d, "sifted")

    def to_bytes(self) -> bytes:
        return self.symbols.astype(np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, d: int) -> KeyStream:
        return cls(np.frombuffer(data, dtype=np.uint8), d, "file")


def discretize(rgb, d: int) -> SymbolImage:
    """Map each channel value v to floor(v * d / 256)."""
    if d not in SUPPORTED_D:
        raise ValueError(f"d must be one of {SUPPORTED_D}")
    a = np.asarray(rgb)
    if a.dtype != np.uint8:
        raise ValueError("expected an 8-bit RGB array")
    return SymbolImage((a.astype(np.int64) * d) // 256, d)


def _check_key(img: SymbolImage, key: KeyStream) -> np.ndarray:
    if key.d != img.d:
        raise ValueError(f"key alphabet d={key.d} does not match image d={img.d}")
    if len(key) != img.size:
        raise ValueError(f"key has {len(key)} symbols, image needs {img.size}")
    return key.symbols.reshape(img.symbols.shape)


def encrypt(img: SymbolImage, key: KeyStream) -> SymbolImage:
    return SymbolImage((img.symbols + _check_key(img, key)) % img.d, img.d)


def decrypt(img: SymbolImage, key: KeyStream) -> SymbolImage:
    return SymbolImage((img.symbols - _check_key(img, key)) % img.d, img.d)


def confusion_channels(matrix: DetectionMatrix) -> np.ndarray:
    """(2, d, d) row-stochastic same-basis blocks, canonical state order."""
    d = matrix.d
    out = np.empty((2, d, d))
    for b in (0, 1):
        blk = matrix.block(b, b)
        s = blk.sum(axis=1, keepdims=True)
        if np.any(s <= 0):
            raise ValueError("a same-basis block row sums to zero")
        out[b] = blk / s
    return out


def channel_corrupt(img: SymbolImage, matrix: DetectionMatrix, rng: np.random.Generator | int) -> SymbolImage:
    """Send every symbol in a random basis and read out Bob's symbol.

    Symbol k prepared in basis b is received as j with probability given by
    the (b, b) block of ``matrix``. ``rng`` may be a seed, in which case each
    image row uses its own keyed stream.
    """
    if matrix.d != img.d:
        raise ValueError(f"matrix d={matrix.d} does not match image d={img.d}")
    C = confusion_channels(matrix)
    cdf = np.cumsum(C, axis=2)
    cdf[..., -1] = 1.0
    flat = img.symbols.reshape(img.height, -1)
    out = np.empty_like(flat)
    for r in range(img.height):
        g = stream(int(rng), "corrupt", r) if not isinstance(rng, np.random.Generator) else rng
        basis = g.integers(0, 2, flat.shape[1])
        u = g.random(flat.shape[1])
        rows = cdf[basis, flat[r]]  # (n, d)
        out[r] = (u[:, None] >= rows).sum(axis=1)
    return SymbolImage(np.minimum(out, img.d - 1).reshape(img.symbols.shape), img.d)


def symbol_error_rate(a: SymbolImage, b: SymbolImage) -> float:
    if a.symbols.shape != b.symbols.shape:
        raise ValueError("images differ in shape")
    return float(np.mean(a.symbols != b.symbols))


def empirical_confusion(sent, received, d: int) -> np.ndarray:
    """Row-normalized d x d confusion counts."""
    C = np.zeros((d, d))
    np.add.at(C, (np.ravel(sent), np.ravel(received)), 1)
    return C / np.maximum(C.sum(axis=1, keepdims=True), 1)


def sample_image(width: int = 96, height: int = 64) -> np.ndarray:
    """Synthetic RGB test card: colour gradients, a disc and bars."""
    y, x = np.mgrid[0:height, 0:width]
    img = np.zeros((height, width, 3), dtype=np.uint8)
    img[..., 0] = (255 * x / max(width - 1, 1)).astype(np.uint8)
    img[..., 1] = (255 * y / max(height - 1, 1)).astype(np.uint8)
    img[..., 2] = np.where((x // 8) % 2 == 0, 200, 40)
    disc = (x - width / 2) ** 2 + (y - height / 2) ** 2 < (min(width, height) / 4) ** 2
    img[disc] = (250, 250, 250)
    return img


# PPM / PNG -----------------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n)*(\S+)")


def write_ppm(path, rgb) -> None:
    a = np.asarray(rgb, dtype=np.uint8)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) array")
    h, w, _ = a.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + a.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) PPM with maxval 255."""
    data = Path(path).read_bytes()
    pos, fields = 0, []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    body = data[pos + 1:pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: pixel data is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def read_image(path) -> np.ndarray:
    """PPM natively; other formats through Pillow when it is installed."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - depends on environment
        raise ValueError(f"{path}: only PPM is supported without Pillow") from None
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, rgb) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        write_ppm(path, rgb)
        return
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        raise ValueError(f"{path}: only PPM is supported without Pillow") from None
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path)
