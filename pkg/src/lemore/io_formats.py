"""Bit-exact weight checkpoints and netpbm image I/O.

Weight file layout (all integers little-endian):

    magic   4 bytes  b"LMWT"
    version u16      1
    count   u32      number of entries
    entry   repeated:
        name_len u16
        name     UTF-8 bytes
        dtype    u8   0 = float32
        rank     u8
        dims     u32 x rank
        payload  float32 row-major, 4 * prod(dims) bytes

Entries are written in model registry order and must match the registry
exactly on load. Images use binary PPM (P6) and PGM (P5) with maxval 255;
label maps store the class index directly as the gray value.
"""

from __future__ import annotations

import struct
from typing import List, Optional, Tuple

import numpy as np

from .errors import (BadMagicError, BadVersionError, EntryShapeError,
                     InvalidArgumentError, MissingEntryError, PixmapError,
                     TruncatedFileError, UnknownEntryError, WeightFileError)
from .model import LeMoReModel
from .tensor import Tensor

MAGIC = b"LMWT"
VERSION = 1
DTYPE_F32 = 0


# ---------------------------------------------------------------------------
# weight checkpoints

def weight_bytes(model: LeMoReModel) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(model.registry))]
    for name, entry in model.registry.items():
        encoded = name.encode("utf-8")
        arr = entry.tensor.data.astype("<f4")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def save_weights(model: LeMoReModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(weight_bytes(model))


def _parse_entries(blob: bytes) -> List[Tuple[str, np.ndarray]]:
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise TruncatedFileError(
                f"truncated while reading {what} (at byte {off})")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise BadMagicError("not a weight file (bad magic)")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise BadVersionError(f"unsupported format version {version}")
    entries: List[Tuple[str, np.ndarray]] = []
    seen = set()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "entry name").decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2, f"{name} header"))
        if dtype != DTYPE_F32:
            raise WeightFileError(f"entry {name!r} has unknown dtype tag {dtype}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"{name} payload")
        if name in seen:
            raise WeightFileError(f"duplicate entry {name!r}")
        seen.add(name)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        entries.append((name, arr))
    if off != len(blob):
        raise TruncatedFileError(
            f"trailing garbage after last entry (at byte {off})")
    return entries


def load_weights(model: LeMoReModel, path: str) -> None:
    """Load a checkpoint; names and shapes must match the registry exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    entries = dict(_parse_entries(blob))
    for name in entries:
        if name not in model.registry:
            raise UnknownEntryError(f"file entry {name!r} is not in the model")
    for name, entry in model.registry.items():
        if name not in entries:
            raise MissingEntryError(f"model entry {name!r} is missing from the file")
        arr = entries[name]
        if arr.shape != entry.tensor.shape:
            raise EntryShapeError(
                f"entry {name!r} has dims {arr.shape}, expected {entry.tensor.shape}")
    for name, entry in model.registry.items():
        entry.tensor.data[...] = entries[name].astype(np.float64)


# ---------------------------------------------------------------------------
# netpbm parsing

class _TokenReader:
    """Whitespace/comment-aware reader over a netpbm header."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def _peek(self) -> Optional[int]:
        return self.blob[self.off] if self.off < len(self.blob) else None

    def skip_space_and_comments(self) -> None:
        while True:
            b = self._peek()
            if b is None:
                return
            if b in b" \t\r\n":
                self.off += 1
            elif b == ord("#"):
                while self._peek() not in (None, ord("\n")):
                    self.off += 1
            else:
                return

    def token(self, what: str) -> bytes:
        self.skip_space_and_comments()
        start = self.off
        while self._peek() is not None and self._peek() not in b" \t\r\n#":
            self.off += 1
        if self.off == start:
            raise PixmapError(f"expected {what}", start)
        return self.blob[start:self.off]

    def int_token(self, what: str) -> int:
        start = self.off
        tok = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise PixmapError(f"{what} is not an integer: {tok!r}", start) from None

    def single_whitespace(self) -> None:
        b = self._peek()
        if b is None or b not in b" \t\r\n":
            raise PixmapError("expected single whitespace before payload", self.off)
        self.off += 1


def _parse_netpbm(blob: bytes, magic: bytes, channels: int
                  ) -> Tuple[int, int, np.ndarray]:
    rd = _TokenReader(blob)
    got = rd.token("magic")
    if got != magic:
        raise PixmapError(f"expected {magic.decode()} magic, got {got!r}", 0)
    width = rd.int_token("width")
    height = rd.int_token("height")
    if width < 1 or height < 1:
        raise PixmapError("dimensions must be positive", rd.off)
    maxval = rd.int_token("maxval")
    if maxval != 255:
        raise PixmapError(f"only maxval 255 is supported, got {maxval}", rd.off)
    rd.single_whitespace()
    n = width * height * channels
    if len(blob) - rd.off < n:
        raise PixmapError(
            f"payload needs {n} bytes, found {len(blob) - rd.off}", rd.off)
    if len(blob) - rd.off > n:
        raise PixmapError("trailing garbage after payload", rd.off + n)
    raw = np.frombuffer(blob, dtype=np.uint8, count=n, offset=rd.off)
    return width, height, raw


def read_ppm(path: str) -> Tensor:
    """Binary P6 image as a 3,H,W tensor scaled to [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, raw = _parse_netpbm(blob, b"P6", 3)
    img = raw.reshape(height, width, 3).transpose(2, 0, 1)
    return Tensor(img.astype(np.float64) / 255.0)


def write_ppm(image: np.ndarray, path: str) -> None:
    """Write a 3,H,W array in [0,1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidArgumentError(f"image must be 3,H,W, got {image.shape}")
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    _, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.transpose(1, 2, 0).tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Binary P5 image as an H,W uint8 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, raw = _parse_netpbm(blob, b"P5", 1)
    return raw.reshape(height, width).copy()


def write_label_pgm(labels: np.ndarray, path: str) -> None:
    """Label map as binary P5; the gray value is the class index itself."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InvalidArgumentError(f"labels must be H,W, got {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise InvalidArgumentError("labels must fit in one byte")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(labels.astype(np.uint8).tobytes())


def default_palette(num_classes: int) -> np.ndarray:
    """Deterministic class colors: dark background, golden-angle hues."""
    pal = np.zeros((num_classes, 3), dtype=np.uint8)
    pal[0] = (24, 24, 24)
    for c in range(1, num_classes):
        hue = (c * 0.618033988749895) % 1.0
        i = int(hue * 6)
        f = hue * 6 - i
        p, q, t = 0.25, 1.0 - 0.75 * f, 0.25 + 0.75 * f
        rgb = [(1, t, p), (q, 1, p), (p, 1, t), (p, q, 1), (t, p, 1),
               (1, p, q)][i % 6]
        pal[c] = tuple(int(round(255 * v)) for v in rgb)
    return pal


def write_color_ppm(labels: np.ndarray, palette: np.ndarray, path: str) -> None:
    """Colorized label map as binary P6 using an N,3 palette."""
    labels = np.asarray(labels)
    palette = np.asarray(palette, dtype=np.uint8)
    if labels.min() < 0 or labels.max() >= palette.shape[0]:
        raise InvalidArgumentError("labels exceed the palette")
    colored = palette[labels]                      # H,W,3
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(colored.tobytes())
