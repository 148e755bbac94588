"""Binary containers for index streams, packet files and raw sample files.

Header layout (little-endian): magic "HMSC", version u8, codec id u8,
rate u8, flags u8, sample count u32.  Indices follow as an MSB-first bit
string, R bits each, zero padded to a whole byte.  Scalable layers carry a
stream id u32 after the header; the enhancement layer also carries L u8 and
R12 u8 so the two layers can be paired on decode.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

MAGIC = b"HMSC"
VERSION = 1
HEADER = struct.Struct("<4sBBBBI")
STREAM_ID = struct.Struct("<I")
ENH_EXTRA = struct.Struct("<BB")
SEQ = struct.Struct("<I")

TRACKING, DPCM, FSQ, SCALABLE_BASE, SCALABLE_ENH = range(5)
FLAG_PACKETIZED = 1


class BitstreamError(ValueError):
    pass


class StreamInfo(NamedTuple):
    codec_id: int
    rate_bits: int
    num_samples: int
    flags: int = 0
    stream_id: int | None = None
    L: int | None = None
    r12: int | None = None


def pack_indices(indices, rate_bits: int) -> bytes:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= 1 << rate_bits):
        raise BitstreamError("index does not fit in the stated rate")
    shifts = np.arange(rate_bits - 1, -1, -1)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def unpack_indices(payload: bytes, rate_bits: int, n: int) -> np.ndarray:
    need = math.ceil(n * rate_bits / 8)
    if len(payload) < need:
        raise BitstreamError(f"payload truncated: {len(payload)} bytes, need {need}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, count=need))[: n * rate_bits]
    if rate_bits == 0:
        return np.zeros(n, dtype=np.int64)
    weights = 1 << np.arange(rate_bits - 1, -1, -1)
    return bits.reshape(n, rate_bits).astype(np.int64) @ weights


def _header(info: StreamInfo) -> bytes:
    out = HEADER.pack(MAGIC, VERSION, info.codec_id, info.rate_bits, info.flags, info.num_samples)
    if info.codec_id in (SCALABLE_BASE, SCALABLE_ENH):
        if info.stream_id is None:
            raise BitstreamError("scalable layers need a stream id")
        out += STREAM_ID.pack(info.stream_id)
    if info.codec_id == SCALABLE_ENH:
        out += ENH_EXTRA.pack(info.L, info.r12)
    return out


def _read_header(data: bytes) -> tuple[StreamInfo, int]:
    if len(data) < HEADER.size:
        raise BitstreamError("file too short for a header")
    magic, version, codec, rate, flags, n = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError("bad magic")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    off = HEADER.size
    sid = L = r12 = None
    if codec in (SCALABLE_BASE, SCALABLE_ENH):
        (sid,) = STREAM_ID.unpack_from(data, off)
        off += STREAM_ID.size
    if codec == SCALABLE_ENH:
        L, r12 = ENH_EXTRA.unpack_from(data, off)
        off += ENH_EXTRA.size
    if codec > SCALABLE_ENH:
        raise BitstreamError(f"unknown codec id {codec}")
    return StreamInfo(codec, rate, n, flags, sid, L, r12), off


def to_bytes(indices, info: StreamInfo) -> bytes:
    return _header(info) + pack_indices(indices, info.rate_bits)


def from_bytes(data: bytes) -> tuple[StreamInfo, np.ndarray]:
    info, off = _read_header(data)
    if info.flags & FLAG_PACKETIZED:
        raise BitstreamError("packetized file; use read_packets")
    return info, unpack_indices(data[off:], info.rate_bits, info.num_samples)


def write_stream(path, indices, info: StreamInfo) -> None:
    Path(path).write_bytes(to_bytes(indices, info))


def read_stream(path) -> tuple[StreamInfo, np.ndarray]:
    return from_bytes(Path(path).read_bytes())


def check_pair(base: StreamInfo, enh: StreamInfo) -> None:
    """Raise unless ``enh`` is the enhancement layer belonging to ``base``."""
    if base.codec_id != SCALABLE_BASE or enh.codec_id != SCALABLE_ENH:
        raise BitstreamError("expected a scalable base and enhancement layer")
    if base.stream_id != enh.stream_id:
        raise BitstreamError("layers come from different streams")
    if base.rate_bits != enh.r12 or base.num_samples != enh.num_samples:
        raise BitstreamError("enhancement layer does not match the base layer")


def packets_to_bytes(seq_nos, indices, rate_bits: int, n_total: int) -> bytes:
    nbytes = math.ceil(rate_bits / 8)
    info = StreamInfo(TRACKING, rate_bits, n_total, FLAG_PACKETIZED)
    parts = [_header(info)]
    for s, k in zip(np.asarray(seq_nos, dtype=np.int64), np.asarray(indices, dtype=np.int64)):
        parts.append(SEQ.pack(int(s)) + int(k).to_bytes(nbytes, "big"))
    return b"".join(parts)


def packets_from_bytes(data: bytes):
    """Returns (seq_nos, indices, rate_bits, n_total)."""
    info, off = _read_header(data)
    if not info.flags & FLAG_PACKETIZED:
        raise BitstreamError("not a packet file")
    step = SEQ.size + math.ceil(info.rate_bits / 8)
    body = data[off:]
    if len(body) % step:
        raise BitstreamError("truncated packet")
    seq, idx = [], []
    for p in range(0, len(body), step):
        (s,) = SEQ.unpack_from(body, p)
        seq.append(s)
        idx.append(int.from_bytes(body[p + SEQ.size:p + step], "big"))
    return np.array(seq, dtype=np.int64), np.array(idx, dtype=np.int64), info.rate_bits, info.num_samples


def ingest_samples(path) -> np.ndarray:
    """Scalar samples from disk.

    ``.bin``/``.f64``/``.raw`` files hold little-endian float64 values; any
    other file is text with one number per line (blank lines and ``#``
    comments are skipped).
    """
    path = Path(path)
    if path.suffix.lower() in (".bin", ".f64", ".raw"):
        raw = path.read_bytes()
        if len(raw) % 8:
            raise ValueError(f"{path}: size {len(raw)} is not a multiple of 8 bytes")
        x = np.frombuffer(raw, dtype="<f8").astype(float)
    else:
        vals = []
        with open(path) as f:
            for ln, line in enumerate(f, 1):
                s = line.split("#", 1)[0].strip()
                if not s:
                    continue
                try:
                    vals.append(float(s))
                except ValueError:
                    raise ValueError(f"{path}:{ln}: cannot parse {s!r} as a number") from None
        x = np.array(vals, dtype=float)
    if x.size == 0:
        raise ValueError(f"{path}: no samples")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: non-finite samples")
    return x


def write_samples(path, x) -> None:
    path = Path(path)
    x = np.asarray(x, dtype=float)
    if path.suffix.lower() in (".bin", ".f64", ".raw"):
        path.write_bytes(x.astype("<f8").tobytes())
    else:
        path.write_text("".join(f"{v!r}\n" for v in x.tolist()))
