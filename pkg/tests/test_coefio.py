"""Binary coefficient container: bit-exact round-trips and format guards."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from sadcoeff.coefio import MAGIC, VERSION, read_coef, write_coef
from sadcoeff.errors import DimensionError, FormatError

from sadcoeff.seeding import rng_for


def _bits(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype="<f4").view(np.uint32)


def test_round_trip_random_payload_is_bit_exact(tmp_path):
    rng = rng_for(77, "coef-roundtrip")
    for case in range(20):
        rows, dim = int(rng.integers(1, 40)), int(rng.integers(1, 12))
        a = rng.normal(scale=10.0 ** rng.integers(-6, 7), size=(rows, dim)).astype(np.float32)
        path = tmp_path / f"case_{case}.coef"
        write_coef(path, a)
        b = read_coef(path)
        assert b.shape == (rows, dim)
        assert b.dtype == np.float32
        np.testing.assert_array_equal(_bits(a), _bits(b))


def test_round_trip_preserves_special_values(tmp_path):
    info = np.finfo(np.float32)
    specials = np.array([
        0.0, -0.0,
        1e-45, -1e-45,              # smallest subnormals
        info.smallest_subnormal, info.tiny,
        info.max, -info.max, info.tiny / 2,
        1e38, -1e38, 1e-38,
        np.pi, -np.pi, 1.0, -1.0,
        np.inf, -np.inf, np.nan,
    ], dtype=np.float32).reshape(-1, 1)
    path = tmp_path / "special.coef"
    write_coef(path, specials)
    back = read_coef(path)
    np.testing.assert_array_equal(_bits(specials), _bits(back))
    # signed zero really survives
    assert np.signbit(back[1, 0]) and not np.signbit(back[0, 0])


def test_one_dimensional_input_becomes_column(tmp_path):
    v = np.arange(5, dtype=np.float32)
    path = tmp_path / "col.coef"
    write_coef(path, v)
    back = read_coef(path)
    assert back.shape == (5, 1)
    np.testing.assert_array_equal(back[:, 0], v)


def test_header_layout_little_endian(tmp_path):
    a = np.array([[1.5, -2.0]], dtype=np.float32)
    path = tmp_path / "h.coef"
    write_coef(path, a)
    raw = path.read_bytes()
    magic, version, rows, dim = struct.unpack_from("<4sIII", raw, 0)
    assert magic == MAGIC == b"SDTC"
    assert version == VERSION == 1
    assert (rows, dim) == (1, 2)
    assert raw[16:] == a.astype("<f4").tobytes()
    # a hand-built file reads back identically
    hand = tmp_path / "hand.coef"
    hand.write_bytes(struct.pack("<4sIII", b"SDTC", 1, 2, 1)
                     + np.array([3.0, 4.0], dtype="<f4").tobytes())
    np.testing.assert_array_equal(read_coef(hand), [[3.0], [4.0]])


def test_three_dimensional_payload_rejected(tmp_path):
    with pytest.raises(DimensionError):
        write_coef(tmp_path / "x.coef", np.zeros((2, 3, 4), dtype=np.float32))


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.coef"
    path.write_bytes(struct.pack("<4sIII", b"NOPE", 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(FormatError):
        read_coef(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v.coef"
    path.write_bytes(struct.pack("<4sIII", b"SDTC", 2, 1, 1) + b"\x00" * 4)
    with pytest.raises(FormatError):
        read_coef(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "t.coef"
    path.write_bytes(b"SDT")
    with pytest.raises(FormatError):
        read_coef(path)


def test_payload_size_mismatch_rejected(tmp_path):
    good = struct.pack("<4sIII", b"SDTC", 1, 2, 3) + b"\x00" * 24
    short = tmp_path / "short.coef"
    short.write_bytes(good[:-4])
    with pytest.raises(FormatError):
        read_coef(short)
    long = tmp_path / "long.coef"
    long.write_bytes(good + b"\x00" * 4)
    with pytest.raises(FormatError):
        read_coef(long)
