"""Binary filter bank files (magic ``DFBK``), little-endian throughout.

Layout::

    b"DFBK"  u16 version  u16 patch_size  3 x u16 bin counts
    4 x f64 thresholds (strength lo/hi, coherence lo/hi)
    u32 tag length, UTF-8 kernel tag
    216 x (u64 count, k*k x f64 taps)
"""

import struct

import numpy as np

from .learning import FilterBank
from .structure import ANGLE_BINS, COHERENCE_BINS, N_KEYS, STRENGTH_BINS, QuantConfig

MAGIC = b"DFBK"
VERSION = 1
_HEADER = struct.Struct("<4sHH3H4d")


class BankFormatError(ValueError):
    pass


def dumps(bank):
    quant = bank.quant
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        bank.patch_size,
        ANGLE_BINS,
        STRENGTH_BINS,
        COHERENCE_BINS,
        *quant.strength_thresholds,
        *quant.coherence_thresholds,
    )
    tag = bank.kernel_tag.encode("utf-8")
    d = bank.patch_size**2
    records = np.zeros(N_KEYS, dtype=[("count", "<u8"), ("taps", "<f8", (d,))])
    records["count"] = bank.counts
    records["taps"] = bank.filters
    return header + struct.pack("<I", len(tag)) + tag + records.tobytes()


def loads(data):
    if len(data) < _HEADER.size + 4:
        raise BankFormatError("truncated filter bank header")
    magic, version, k, na, ns, nc, s0, s1, c0, c1 = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BankFormatError(f"not a filter bank file (magic {magic!r})")
    if version != VERSION:
        raise BankFormatError(f"unsupported filter bank version {version}")
    if (na, ns, nc) != (ANGLE_BINS, STRENGTH_BINS, COHERENCE_BINS):
        raise BankFormatError(f"unsupported bin layout {(na, ns, nc)}")
    pos = _HEADER.size
    (tag_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tag = data[pos : pos + tag_len].decode("utf-8")
    pos += tag_len
    d = k * k
    dtype = np.dtype([("count", "<u8"), ("taps", "<f8", (d,))])
    if len(data) - pos != N_KEYS * dtype.itemsize:
        raise BankFormatError("filter bank body has the wrong size")
    records = np.frombuffer(data, dtype=dtype, count=N_KEYS, offset=pos)
    quant = QuantConfig(strength_thresholds=(s0, s1), coherence_thresholds=(c0, c1))
    return FilterBank(
        patch_size=k,
        quant=quant,
        kernel_tag=tag,
        filters=records["taps"].astype(np.float64),
        counts=records["count"].astype(np.int64),
    )


def save_bank(bank, path):
    with open(path, "wb") as fh:
        fh.write(dumps(bank))


def load_bank(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
