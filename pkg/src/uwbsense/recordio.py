"""250-byte CIR record codec and the append-only capture container.

Record layout (little-endian, 250 bytes)::

    off  size  field
      0     2  seq             u16
      2     2  fp_index        u16
      4     2  fp_frac         u16, 0..63 (1/64 sample steps)
      6     2  preamble_count  u16
      8     2  tx_id           u16
     10     2  rx_id           u16
     12     6  timestamp_us    u48
     18   232  samples         58 x (real i16, imag i16)

Capture file: 16-byte header (``b"UWBC"``, version u16, radio-config hash
u64, 2 reserved bytes) followed by back-to-back records.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

N_SAMPLES = 58
RECORD_SIZE = 250
HEADER_SIZE = 16
MAGIC = b"UWBC"
VERSION = 1

_META = struct.Struct("<6H")
_HEADER = struct.Struct("<4sHQ2x")

RECORD_DTYPE = np.dtype([
    ("seq", "<u2"),
    ("fp_index", "<u2"),
    ("fp_frac", "<u2"),
    ("preamble_count", "<u2"),
    ("tx_id", "<u2"),
    ("rx_id", "<u2"),
    ("ts_lo", "<u4"),
    ("ts_hi", "<u2"),
    ("samples", "<i2", (N_SAMPLES, 2)),
])
assert RECORD_DTYPE.itemsize == RECORD_SIZE


class RecordError(ValueError):
    """Invalid record for encoding."""


class CorruptRecordError(RecordError):
    """Decoded bytes violate a record invariant."""


class CaptureFormatError(ValueError):
    pass


class TruncatedCaptureWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CirRecord:
    seq: int
    fp_index: int
    fp_frac: int
    preamble_count: int
    tx_id: int
    rx_id: int
    timestamp_us: int
    samples: np.ndarray  # (58, 2) int16

    @property
    def link(self) -> tuple[int, int]:
        return self.tx_id, self.rx_id

    def complex(self) -> np.ndarray:
        return self.samples[:, 0].astype(float) + 1j * self.samples[:, 1]

    def __eq__(self, other):
        if not isinstance(other, CirRecord):
            return NotImplemented
        return (self.header() == other.header()
                and np.array_equal(self.samples, other.samples))

    def header(self) -> tuple[int, ...]:
        return (self.seq, self.fp_index, self.fp_frac, self.preamble_count,
                self.tx_id, self.rx_id, self.timestamp_us)


def _check(seq, fp_index, fp_frac, preamble_count, tx_id, rx_id, timestamp_us, exc=RecordError):
    for name, v in (("seq", seq), ("fp_index", fp_index), ("preamble_count", preamble_count),
                    ("tx_id", tx_id), ("rx_id", rx_id)):
        if not 0 <= v < 1 << 16:
            raise exc(f"{name}={v} does not fit in u16")
    if not 0 <= fp_frac <= 63:
        raise exc(f"fp_frac={fp_frac} outside 0..63")
    if tx_id == rx_id:
        raise exc(f"tx_id == rx_id == {tx_id}")
    if not 0 <= timestamp_us < 1 << 48:
        raise exc(f"timestamp_us={timestamp_us} does not fit in 48 bits")


def encode_record(r: CirRecord) -> bytes:
    _check(*r.header())
    samples = np.asarray(r.samples)
    if samples.shape != (N_SAMPLES, 2):
        raise RecordError(f"samples must have shape ({N_SAMPLES}, 2), got {samples.shape}")
    if samples.dtype != np.int16:
        if samples.min(initial=0) < -32768 or samples.max(initial=0) > 32767:
            raise RecordError("sample outside int16 range")
    meta = _META.pack(r.seq, r.fp_index, r.fp_frac, r.preamble_count, r.tx_id, r.rx_id)
    return meta + r.timestamp_us.to_bytes(6, "little") + samples.astype("<i2").tobytes()


def decode_record(data: bytes) -> CirRecord:
    if len(data) != RECORD_SIZE:
        raise RecordError(f"record must be {RECORD_SIZE} bytes, got {len(data)}")
    seq, fp_index, fp_frac, pc, tx, rx = _META.unpack_from(data)
    ts = int.from_bytes(data[12:18], "little")
    _check(seq, fp_index, fp_frac, pc, tx, rx, ts, exc=CorruptRecordError)
    samples = np.frombuffer(data, dtype="<i2", offset=18).reshape(N_SAMPLES, 2).astype(np.int16)
    return CirRecord(seq, fp_index, fp_frac, pc, tx, rx, ts, samples)


# --- bulk (structured array) form --------------------------------------------

def timestamps(arr: np.ndarray) -> np.ndarray:
    return arr["ts_lo"].astype(np.int64) | (arr["ts_hi"].astype(np.int64) << 32)


def to_array(records: Iterable[CirRecord]) -> np.ndarray:
    records = list(records)
    arr = np.zeros(len(records), dtype=RECORD_DTYPE)
    for i, r in enumerate(records):
        _check(*r.header())
        arr[i] = (r.seq, r.fp_index, r.fp_frac, r.preamble_count, r.tx_id, r.rx_id,
                  r.timestamp_us & 0xFFFFFFFF, r.timestamp_us >> 32, r.samples)
    return arr


def from_array(arr: np.ndarray) -> list[CirRecord]:
    ts = timestamps(arr)
    return [
        CirRecord(int(a["seq"]), int(a["fp_index"]), int(a["fp_frac"]), int(a["preamble_count"]),
                  int(a["tx_id"]), int(a["rx_id"]), int(t), np.array(a["samples"], dtype=np.int16))
        for a, t in zip(arr, ts)
    ]


def validate_array(arr: np.ndarray) -> None:
    if np.any(arr["fp_frac"] > 63):
        raise CorruptRecordError("fp_frac outside 0..63")
    if np.any(arr["tx_id"] == arr["rx_id"]):
        raise CorruptRecordError("tx_id == rx_id")


# --- capture files ------------------------------------------------------------

def _header(config_hash: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, config_hash & 0xFFFFFFFFFFFFFFFF)


class CaptureWriter:
    """Append-only capture writer; creates the header on first open."""

    def __init__(self, path: str | Path, config_hash: int = 0, append: bool = False):
        self.path = Path(path)
        if append and self.path.exists() and self.path.stat().st_size >= HEADER_SIZE:
            read_header(self.path)
            self._fh = open(self.path, "ab")
        else:
            self._fh = open(self.path, "wb")
            self._fh.write(_header(config_hash))
        self.count = 0

    def write(self, record: CirRecord) -> None:
        self._fh.write(encode_record(record))
        self.count += 1

    def write_array(self, arr: np.ndarray) -> None:
        validate_array(arr)
        self._fh.write(np.ascontiguousarray(arr, dtype=RECORD_DTYPE).tobytes())
        self.count += len(arr)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def capture_write(path: str | Path, records: Iterable[CirRecord], config_hash: int = 0) -> int:
    with CaptureWriter(path, config_hash) as w:
        for r in records:
            w.write(r)
        return w.count


def read_header(path: str | Path) -> tuple[int, int]:
    """Returns ``(version, config_hash)``."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise CaptureFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, chash = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CaptureFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CaptureFormatError(f"{path}: unsupported version {version}")
    return version, chash


def _payload_count(path: Path) -> int:
    size = path.stat().st_size - HEADER_SIZE
    n, rem = divmod(size, RECORD_SIZE)
    if rem:
        warnings.warn(f"{path}: trailing partial record ({rem} bytes) dropped",
                      TruncatedCaptureWarning, stacklevel=3)
    return n


def capture_read(path: str | Path) -> Iterator[CirRecord]:
    """Stream records one at a time without loading the whole file."""
    path = Path(path)
    read_header(path)
    n = _payload_count(path)
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        for _ in range(n):
            yield decode_record(fh.read(RECORD_SIZE))


def capture_read_array(path: str | Path, chunk: int | None = None) -> Iterator[np.ndarray]:
    """Stream records as structured-array chunks (whole file if ``chunk`` is None)."""
    path = Path(path)
    read_header(path)
    n = _payload_count(path)
    step = max(n, 1) if chunk is None else chunk
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        for start in range(0, n, step):
            arr = np.fromfile(fh, dtype=RECORD_DTYPE, count=min(step, n - start))
            validate_array(arr)
            yield arr
