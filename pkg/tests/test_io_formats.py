"""Checkpoint and netpbm round trips, plus corrupted-file fixtures."""

import struct

import numpy as np
import pytest

from lemore.errors import (BadMagicError, BadVersionError, EntryShapeError,
                           MissingEntryError, PixmapError, TruncatedFileError,
                           UnknownEntryError, WeightFileError)
from lemore.io_formats import (default_palette, load_weights, read_pgm,
                               read_ppm, save_weights, weight_bytes,
                               write_color_ppm, write_label_pgm, write_ppm)
from conftest import small_config
from lemore.model import build


@pytest.fixture
def model():
    return build(small_config())


class TestWeightRoundTrip:
    def test_round_trip_float32_precision(self, model, tmp_path):
        path = str(tmp_path / "w.lmwt")
        save_weights(model, path)
        twin = build(small_config())
        for _, e in twin.registry.items():
            e.tensor.data[...] = 0.0
        load_weights(twin, path)
        worst = 0.0
        for name, e in model.registry.items():
            a = e.tensor.data
            b = twin.registry[name].tensor.data
            denom = np.maximum(np.abs(a), 1e-30)
            worst = max(worst, (np.abs(a - b) / denom).max())
        assert worst <= 1.2e-7

    def test_entries_written_in_registry_order(self, model):
        blob = weight_bytes(model)
        names = []
        off = 10
        for _ in range(len(model.registry)):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            names.append(blob[off:off + nlen].decode())
            off += nlen
            dtype, rank = struct.unpack_from("<BB", blob, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            off += 4 * int(np.prod(dims))
        assert names == list(model.registry)

    def test_byte_level_fixture(self, tmp_path):
        # hand-built single-entry file: 2x2 tensor with known bytes
        payload = struct.pack("<4f", 1.0, -2.0, 0.5, 4.0)
        blob = (b"LMWT" + struct.pack("<HI", 1, 1)
                + struct.pack("<H", 4) + b"w.xy"
                + struct.pack("<BB", 0, 2) + struct.pack("<II", 2, 2)
                + payload)
        from lemore.io_formats import _parse_entries
        entries = _parse_entries(blob)
        assert len(entries) == 1
        name, arr = entries[0]
        assert name == "w.xy"
        assert np.array_equal(arr, [[1.0, -2.0], [0.5, 4.0]])


class TestWeightErrors:
    def _boot(self, model, tmp_path):
        path = str(tmp_path / "w.lmwt")
        save_weights(model, path)
        with open(path, "rb") as fh:
            return path, bytearray(fh.read())

    def test_bad_magic(self, model, tmp_path):
        path, blob = self._boot(model, tmp_path)
        blob[0:4] = b"XXXX"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(BadMagicError):
            load_weights(model, path)

    def test_bad_version(self, model, tmp_path):
        path, blob = self._boot(model, tmp_path)
        blob[4:6] = struct.pack("<H", 9)
        open(path, "wb").write(bytes(blob))
        with pytest.raises(BadVersionError):
            load_weights(model, path)

    def test_truncated_payload(self, model, tmp_path):
        path, blob = self._boot(model, tmp_path)
        open(path, "wb").write(bytes(blob[:-3]))
        with pytest.raises(TruncatedFileError):
            load_weights(model, path)

    def test_trailing_garbage(self, model, tmp_path):
        path, blob = self._boot(model, tmp_path)
        open(path, "wb").write(bytes(blob) + b"\x00")
        with pytest.raises(TruncatedFileError):
            load_weights(model, path)

    def test_renamed_entry_names_it(self, model, tmp_path):
        path, blob = self._boot(model, tmp_path)
        first = next(iter(model.registry)).encode()
        renamed = b"Z" + first[1:]
        open(path, "wb").write(bytes(blob).replace(first, renamed, 1))
        with pytest.raises((UnknownEntryError, MissingEntryError)) as err:
            load_weights(model, path)
        assert renamed.decode()[:8] in str(err.value) or \
            first.decode()[:8] in str(err.value)

    def test_missing_entry(self, model, tmp_path):
        # rebuild a file with the last entry dropped
        blob = weight_bytes(model)
        names = list(model.registry)
        # write count-1 entries by re-serializing a trimmed model dict
        trimmed = blob[:10]
        off = 10
        for _ in range(len(names) - 1):
            (nlen,) = struct.unpack_from("<H", blob, off)
            dtype, rank = struct.unpack_from("<BB", blob, off + 2 + nlen)
            dims = struct.unpack_from(f"<{rank}I", blob, off + 4 + nlen)
            size = 2 + nlen + 2 + 4 * rank + 4 * int(np.prod(dims))
            trimmed += blob[off:off + size]
            off += size
        trimmed = trimmed[:4] + struct.pack("<HI", 1, len(names) - 1) + trimmed[10:]
        path = str(tmp_path / "w.lmwt")
        open(path, "wb").write(trimmed)
        with pytest.raises(MissingEntryError) as err:
            load_weights(model, path)
        assert names[-1] in str(err.value)

    def test_shape_mismatch_names_entry(self, model, tmp_path):
        path = str(tmp_path / "w.lmwt")
        other = build(small_config(stem_width=7))
        save_weights(other, path)
        with pytest.raises(EntryShapeError) as err:
            load_weights(model, path)
        assert "stem" in str(err.value)

    def test_unknown_dtype_tag(self, tmp_path):
        blob = (b"LMWT" + struct.pack("<HI", 1, 1) + struct.pack("<H", 1)
                + b"x" + struct.pack("<BB", 3, 1) + struct.pack("<I", 1)
                + b"\x00" * 4)
        path = str(tmp_path / "w.lmwt")
        open(path, "wb").write(blob)
        model = build(small_config())
        with pytest.raises(WeightFileError):
            load_weights(model, path)


class TestNetpbm:
    def test_white_pixel(self, tmp_path):
        path = str(tmp_path / "a.ppm")
        open(path, "wb").write(b"P6\n1 1\n255\n\xff\xff\xff")
        img = read_ppm(path)
        assert img.shape == (3, 1, 1)
        assert np.array_equal(img.data, np.ones((3, 1, 1)))

    def test_label_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 5, (9, 7))
        path = str(tmp_path / "a.pgm")
        write_label_pgm(labels, path)
        assert np.array_equal(read_pgm(path), labels)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (3, 5, 6)) / 255.0
        path = str(tmp_path / "a.ppm")
        write_ppm(img, path)
        back = read_ppm(path)
        assert np.abs(back.data - img).max() < 1e-12

    def test_header_comments_fixture(self, tmp_path):
        path = str(tmp_path / "a.ppm")
        payload = bytes(range(12))
        open(path, "wb").write(
            b"P6 # comment after magic\n# full line\n 2\t2 # dims\n255\n" + payload)
        img = read_ppm(path)
        want = np.frombuffer(payload, np.uint8).reshape(2, 2, 3)
        assert np.array_equal((img.data * 255).astype(np.uint8),
                              want.transpose(2, 0, 1))

    def test_bad_magic_offset(self, tmp_path):
        path = str(tmp_path / "a.ppm")
        open(path, "wb").write(b"P5\n1 1\n255\n\x00")
        with pytest.raises(PixmapError) as err:
            read_ppm(path)
        assert err.value.offset == 0

    def test_short_payload_reports_offset(self, tmp_path):
        path = str(tmp_path / "a.ppm")
        open(path, "wb").write(b"P6\n2 2\n255\n\x00\x00")
        with pytest.raises(PixmapError) as err:
            read_ppm(path)
        assert "payload" in str(err.value)
        assert err.value.offset == 11

    def test_trailing_garbage_rejected(self, tmp_path):
        path = str(tmp_path / "a.pgm")
        open(path, "wb").write(b"P5\n1 1\n255\n\x00EXTRA")
        with pytest.raises(PixmapError) as err:
            read_pgm(path)
        assert "trailing" in str(err.value)

    def test_wrong_maxval_rejected(self, tmp_path):
        path = str(tmp_path / "a.ppm")
        open(path, "wb").write(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
        with pytest.raises(PixmapError):
            read_ppm(path)

    def test_palette_ppm(self, tmp_path):
        labels = np.array([[0, 1], [2, 1]])
        pal = default_palette(3)
        path = str(tmp_path / "a.ppm")
        write_color_ppm(labels, pal, path)
        img = read_ppm(path)
        got = (img.data * 255).astype(np.uint8).transpose(1, 2, 0)
        assert np.array_equal(got, pal[labels])

    def test_palette_deterministic_and_distinct(self):
        pal = default_palette(16)
        assert np.array_equal(pal, default_palette(16))
        assert len({tuple(c) for c in pal}) == 16
