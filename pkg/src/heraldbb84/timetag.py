"""Time-tag event streams, windowed coincidence counting, and QTAG file I/O.

All timestamps are integer picoseconds since acquisition start, so window
comparisons are exact and never hit float ties.  A window is always a FULL
width: two tags coincide when ``|t_b - t_a - offset| <= window/2``, boundary
inclusive.  Pairing is greedy earliest-first and one-to-one, the standard
discipline for time-tagger post-processing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, FormatError

__all__ = [
    "CHANNEL_HERALD",
    "BOB_CHANNELS",
    "CHANNEL_IDLER_1",
    "CHANNEL_IDLER_2",
    "TimeTagRecord",
    "TagStream",
    "CoincidenceCounts",
    "merge_streams",
    "count_coincidences",
    "count_triples",
    "tally_coincidences",
    "read_tags",
    "write_tags",
]

# Channel conventions used across the pipeline.
CHANNEL_HERALD = 0
BOB_CHANNELS = (1, 2, 3, 4)  # H, V, D, A detectors
CHANNEL_IDLER_1 = 5
CHANNEL_IDLER_2 = 6


@dataclass(frozen=True)
class TimeTagRecord:
    """One detection event: picosecond timestamp plus detector channel."""

    time_ps: int
    channel: int

    def __post_init__(self):
        if self.time_ps < 0:
            raise ValueError(f"time_ps must be >= 0, got {self.time_ps}")
        if not 0 <= self.channel <= 255:
            raise ValueError(f"channel must fit in one byte, got {self.channel}")


@dataclass(frozen=True)
class TagStream:
    """Immutable sorted sequence of time tags over one acquisition.

    Attributes:
        times_ps: int64 array of timestamps, sorted non-decreasing.
        channels: uint8 array of detector channels, same length.
        duration_ps: acquisition span; every timestamp is <= duration_ps.
    """

    times_ps: np.ndarray
    channels: np.ndarray
    duration_ps: int

    def __post_init__(self):
        times = np.ascontiguousarray(self.times_ps, dtype=np.int64)
        chans = np.ascontiguousarray(self.channels, dtype=np.uint8)
        object.__setattr__(self, "times_ps", times)
        object.__setattr__(self, "channels", chans)
        if times.shape != chans.shape or times.ndim != 1:
            raise ValueError("times_ps and channels must be 1-d arrays of equal length")
        if self.duration_ps < 0:
            raise ValueError("duration_ps must be >= 0")
        if times.size:
            if times[0] < 0:
                raise ValueError("timestamps must be >= 0")
            if np.any(np.diff(times) < 0):
                raise ValueError("timestamps must be sorted non-decreasing")
            if times[-1] > self.duration_ps:
                raise ValueError("timestamps must not exceed duration_ps")
        times.setflags(write=False)
        chans.setflags(write=False)

    def __len__(self) -> int:
        return int(self.times_ps.size)

    @classmethod
    def empty(cls, duration_ps: int) -> "TagStream":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8), duration_ps)

    @classmethod
    def from_records(cls, records, duration_ps: int) -> "TagStream":
        """Build a stream from an iterable of TimeTagRecord (or (t, ch) pairs)."""
        pairs = [(r.time_ps, r.channel) if isinstance(r, TimeTagRecord) else tuple(r) for r in records]
        if not pairs:
            return cls.empty(duration_ps)
        times = np.array([p[0] for p in pairs], dtype=np.int64)
        chans = np.array([p[1] for p in pairs], dtype=np.uint8)
        return cls(times, chans, duration_ps)

    def records(self) -> list[TimeTagRecord]:
        return [TimeTagRecord(int(t), int(c)) for t, c in zip(self.times_ps, self.channels)]

    def select_channel(self, channel: int) -> "TagStream":
        """Sub-stream containing only the given channel."""
        mask = self.channels == channel
        return TagStream(self.times_ps[mask], self.channels[mask], self.duration_ps)

    def rate_hz(self) -> float:
        """Mean event rate over the acquisition."""
        if self.duration_ps == 0:
            return 0.0
        return self.times_ps.size / (self.duration_ps * 1e-12)


@dataclass(frozen=True)
class CoincidenceCounts:
    """Windowed tally over a set of channels.

    Invariants checked on construction: a pair count never exceeds either of
    its singles, and the triple count never exceeds any involved pair count.
    """

    singles: dict = field(default_factory=dict)
    pair_counts: dict = field(default_factory=dict)
    triple_count: int = 0
    triple_channels: tuple = ()
    window_ps: int = 0

    def __post_init__(self):
        for (ca, cb), n in self.pair_counts.items():
            cap = min(self.singles.get(ca, 0), self.singles.get(cb, 0))
            if n > cap:
                raise ValueError(f"pair count {n} for {(ca, cb)} exceeds singles bound {cap}")
        if self.triple_channels:
            a, b, c = self.triple_channels
            for pair in ((a, b), (a, c)):
                if pair in self.pair_counts and self.triple_count > self.pair_counts[pair]:
                    raise ValueError("triple count exceeds an involved pair count")


def merge_streams(a: TagStream, b: TagStream) -> TagStream:
    """Merge two sorted streams of equal duration into one sorted stream.

    Ties in time are broken by channel (lower channel first), which makes the
    merge deterministic.
    """
    if a.duration_ps != b.duration_ps:
        raise ConfigError(
            f"cannot merge streams of different durations ({a.duration_ps} vs {b.duration_ps} ps)"
        )
    times = np.concatenate([a.times_ps, b.times_ps])
    chans = np.concatenate([a.channels, b.channels])
    order = np.lexsort((chans, times))
    return TagStream(times[order], chans[order], a.duration_ps)


@njit(cache=True)
def _count_pairs_core(a: np.ndarray, b: np.ndarray, window_ps: int, offset_ps: int) -> int:
    # Greedy earliest-first one-to-one matching; |delta| <= window/2 tested as
    # 2*|delta| <= window to stay exact for odd windows.
    i = 0
    j = 0
    n = 0
    while i < a.size and j < b.size:
        d2 = 2 * (b[j] - a[i] - offset_ps)
        if d2 < -window_ps:
            j += 1
        elif d2 > window_ps:
            i += 1
        else:
            n += 1
            i += 1
            j += 1
    return n


@njit(cache=True)
def _count_triples_core(s: np.ndarray, b1: np.ndarray, b2: np.ndarray, window_ps: int) -> int:
    used1 = np.zeros(b1.size, dtype=np.bool_)
    used2 = np.zeros(b2.size, dtype=np.bool_)
    j1 = 0
    j2 = 0
    n = 0
    for i in range(s.size):
        t = s[i]
        while j1 < b1.size and (used1[j1] or 2 * (b1[j1] - t) < -window_ps):
            j1 += 1
        while j2 < b2.size and (used2[j2] or 2 * (b2[j2] - t) < -window_ps):
            j2 += 1
        k1 = j1
        m1 = -1
        while k1 < b1.size and 2 * (b1[k1] - t) <= window_ps:
            if not used1[k1]:
                m1 = k1
                break
            k1 += 1
        if m1 < 0:
            continue
        k2 = j2
        m2 = -1
        while k2 < b2.size and 2 * (b2[k2] - t) <= window_ps:
            if not used2[k2]:
                m2 = k2
                break
            k2 += 1
        if m2 < 0:
            continue
        # Only a completed triple consumes partners; a lone one-sided match
        # stays available for later heralds.
        used1[m1] = True
        used2[m2] = True
        n += 1
    return n


def count_coincidences(a: TagStream, b: TagStream, window_ps: int, offset_ps: int = 0) -> int:
    """Count windowed coincidences between two sorted streams.

    A record of ``a`` and a record of ``b`` coincide when
    ``|t_b - t_a - offset_ps| <= window_ps / 2`` (boundary inclusive).  Records
    are paired one-to-one, greedy earliest-first, via a linear two-pointer
    sweep.

    Args:
        a: first stream (the "start" side).
        b: second stream.
        window_ps: full coincidence window width, > 0.
        offset_ps: expected delay of b relative to a.

    Returns:
        Number of matched pairs.
    """
    if window_ps <= 0:
        raise ValueError(f"window_ps must be > 0, got {window_ps}")
    return int(_count_pairs_core(a.times_ps, b.times_ps, window_ps, offset_ps))


def count_triples(s: TagStream, i1: TagStream, i2: TagStream, window_ps: int) -> int:
    """Count three-fold coincidences: s-records with partners in both i1 and i2.

    Each i1/i2 record is consumed by at most one s-record (greedy
    earliest-first); partners are consumed only when the triple completes.
    """
    if window_ps <= 0:
        raise ValueError(f"window_ps must be > 0, got {window_ps}")
    return int(_count_triples_core(s.times_ps, i1.times_ps, i2.times_ps, window_ps))


def tally_coincidences(
    streams: dict[int, TagStream],
    pairs: list[tuple[int, int]],
    window_ps: int,
    triple: tuple[int, int, int] | None = None,
) -> CoincidenceCounts:
    """Build a CoincidenceCounts summary for the given channel streams."""
    singles = {ch: len(st) for ch, st in streams.items()}
    pair_counts = {
        (ca, cb): count_coincidences(streams[ca], streams[cb], window_ps) for ca, cb in pairs
    }
    triple_count = 0
    if triple is not None:
        a, b, c = triple
        triple_count = count_triples(streams[a], streams[b], streams[c], window_ps)
    return CoincidenceCounts(
        singles=singles,
        pair_counts=pair_counts,
        triple_count=triple_count,
        triple_channels=triple or (),
        window_ps=window_ps,
    )


# --- QTAG v1 binary format ---------------------------------------------------
#
# Header (16 bytes): magic "QTAG", uint16 LE version (= 1), uint8 channel
# count, uint8 reserved (= 0), uint64 LE duration_ps.  Then one 9-byte record
# per tag: uint64 LE time_ps + uint8 channel, sorted by time.

QTAG_MAGIC = b"QTAG"
QTAG_VERSION = 1
_QTAG_HEADER = struct.Struct("<4sHBBQ")
_RECORD_DTYPE = np.dtype([("time_ps", "<u8"), ("channel", "u1")])


def write_tags(stream: TagStream, path) -> None:
    """Write a stream to a QTAG v1 file."""
    n_channels = int(np.unique(stream.channels).size)
    header = _QTAG_HEADER.pack(QTAG_MAGIC, QTAG_VERSION, n_channels, 0, stream.duration_ps)
    records = np.empty(len(stream), dtype=_RECORD_DTYPE)
    records["time_ps"] = stream.times_ps
    records["channel"] = stream.channels
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())


def read_tags(path) -> TagStream:
    """Read a QTAG v1 file, validating structure and sort order.

    Raises:
        FormatError: bad magic/version, truncated header or record, or
            unsorted payload; the message names the byte offset.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _QTAG_HEADER.size:
        raise FormatError("truncated QTAG header", offset=len(data))
    magic, version, _n_channels, _reserved, duration_ps = _QTAG_HEADER.unpack_from(data, 0)
    if magic != QTAG_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QTAG_MAGIC!r}", offset=0)
    if version != QTAG_VERSION:
        raise FormatError(f"unsupported QTAG version {version}", offset=4)
    payload = data[_QTAG_HEADER.size :]
    n_full, remainder = divmod(len(payload), _RECORD_DTYPE.itemsize)
    if remainder:
        raise FormatError(
            "truncated record", offset=_QTAG_HEADER.size + n_full * _RECORD_DTYPE.itemsize
        )
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    times = records["time_ps"].astype(np.int64)
    if times.size:
        bad = np.nonzero(np.diff(times) < 0)[0]
        if bad.size:
            raise FormatError(
                "unsorted payload",
                offset=_QTAG_HEADER.size + int(bad[0] + 1) * _RECORD_DTYPE.itemsize,
            )
    try:
        return TagStream(times, records["channel"].copy(), int(duration_ps))
    except ValueError as exc:
        raise FormatError(f"invalid payload: {exc}") from exc
