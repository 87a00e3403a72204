"""Timestamp-difference sifting.

Alice never announces which state she sent; the encoding hides in the optical
delays.  For each of Bob's detection tags she checks whether the tag lags one
of her herald tags by (path delay + channel delay - herald arm delay), within
half a coincidence window, for exactly one path and exactly one herald.  The
matched path names the state she sent; mismatched-basis events and all
ambiguous ones are discarded.  What survives is the sifted key.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError
from .timetag import TagStream, count_coincidences
from .transmitter import PATHS, PathDelayTable, PolarizationState

__all__ = [
    "SiftConfig",
    "SiftStats",
    "SiftedKey",
    "expected_offset",
    "sift",
    "sift_bruteforce",
    "scan_channel_delay",
    "correlation_histogram",
    "write_sifted",
    "read_sifted",
]


@dataclass(frozen=True)
class SiftConfig:
    """Sifting parameters shared between Alice's matcher and the simulator.

    The window must stay strictly below the smallest delay gap between two
    paths of the same basis: a cross-basis confusion is caught by the basis
    filter or the ambiguity discard, but two same-basis paths closer than the
    window would silently swap bit values.
    """

    window_ps: int = 1_500
    delta_ch_ps: int = 2_500
    herald_delay_ps: int = 3_070
    table: PathDelayTable = None

    def __post_init__(self):
        if self.table is None:
            object.__setattr__(self, "table", PathDelayTable())
        if self.window_ps <= 0:
            raise ConfigError(f"window_ps must be > 0, got {self.window_ps}")
        if self.delta_ch_ps < 0 or self.herald_delay_ps < 0:
            raise ConfigError("delays must be >= 0")
        gap = self.table.min_same_basis_gap_ps()
        if self.window_ps >= gap:
            raise ConfigError(
                f"window_ps {self.window_ps} must stay below the smallest same-basis "
                f"delay gap {gap} ps; polarization identification would be ambiguous"
            )

    def offset_array(self) -> np.ndarray:
        """Expected (t_bob - t_herald) per path, indexed in PATHS order."""
        return np.array([expected_offset(self, p) for p in PATHS], dtype=np.int64)


def expected_offset(cfg: SiftConfig, path: str) -> int:
    """Predicted Bob-minus-herald time difference for one path.

    The herald tag already includes the signal-arm delay, so that delay is
    subtracted from the path + channel propagation total.
    """
    return cfg.table.delay_ps(path) + cfg.delta_ch_ps - cfg.herald_delay_ps


@dataclass(frozen=True)
class SiftStats:
    """Per-category tag accounting for one sifting pass."""

    n_bob_tags: int = 0
    n_no_candidate: int = 0
    n_ambiguous_herald: int = 0
    n_ambiguous_path: int = 0
    n_unique_match: int = 0
    n_wrong_basis: int = 0
    n_retained: int = 0
    per_state_retained: tuple = (0, 0, 0, 0)


@dataclass(frozen=True, eq=False)
class SiftedKey:
    """Aligned bit strings plus per-event provenance.

    Attributes:
        alice_bits / bob_bits: equal-length 0/1 arrays.
        herald_ps / bob_ps: matched tag times.
        path_idx / state_idx: identified path (PATHS order) and sent state.
        channel: Bob's detector channel (1..4).
        herald_idx: index of the consumed herald in the input stream, or None
            when the key was re-read from disk.
        stats: tag accounting, or None when re-read from disk.
    """

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    herald_ps: np.ndarray
    bob_ps: np.ndarray
    path_idx: np.ndarray
    state_idx: np.ndarray
    channel: np.ndarray
    herald_idx: np.ndarray = None
    stats: SiftStats = None

    def __post_init__(self):
        conv = {
            "alice_bits": np.uint8,
            "bob_bits": np.uint8,
            "herald_ps": np.int64,
            "bob_ps": np.int64,
            "path_idx": np.uint8,
            "state_idx": np.uint8,
            "channel": np.uint8,
        }
        n = None
        for name, dtype in conv.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError("all key arrays must have equal length")
        if self.herald_idx is not None:
            hidx = np.ascontiguousarray(self.herald_idx, dtype=np.int64)
            hidx.setflags(write=False)
            object.__setattr__(self, "herald_idx", hidx)
            if hidx.size != n:
                raise ValueError("herald_idx must match key length")
        if n:
            if self.channel.min() < 1 or self.channel.max() > 4:
                raise ValueError("detector channels must be 1..4")
            det_state = self.channel - 1
            if np.any((self.state_idx >> 1) != (det_state >> 1)):
                raise ValueError("retained events must have matching bases")
            if np.any(self.alice_bits != (self.state_idx & 1)):
                raise ValueError("alice_bits must follow the state bit map")
            if np.any(self.bob_bits != (det_state & 1)):
                raise ValueError("bob_bits must follow the detector bit map")

    def __len__(self) -> int:
        return int(self.alice_bits.size)

    @classmethod
    def empty(cls) -> "SiftedKey":
        z8 = np.empty(0, dtype=np.uint8)
        z64 = np.empty(0, dtype=np.int64)
        return cls(z8, z8, z64, z64, z8, z8, z8, herald_idx=z64, stats=SiftStats())

    def error_fraction(self) -> float:
        """Raw disagreement fraction between the two bit strings."""
        if not len(self):
            return 0.0
        return float(np.mean(self.alice_bits != self.bob_bits))

    def select(self, idx) -> "SiftedKey":
        """Sub-key at the given positions (index array or boolean mask).

        Stream-level stats do not survive subsetting and are dropped.
        """
        return SiftedKey(
            alice_bits=self.alice_bits[idx],
            bob_bits=self.bob_bits[idx],
            herald_ps=self.herald_ps[idx],
            bob_ps=self.bob_ps[idx],
            path_idx=self.path_idx[idx],
            state_idx=self.state_idx[idx],
            channel=self.channel[idx],
            herald_idx=None if self.herald_idx is None else self.herald_idx[idx],
        )


@njit(cache=True)
def _popcount4(mask: int) -> int:
    n = 0
    for p in range(4):
        if mask & (1 << p):
            n += 1
    return n


@njit(cache=True)
def _sift_core(h_times, b_times, b_basis, offsets, path_basis, window_ps):
    n_b = b_times.size
    consumed = np.zeros(h_times.size, dtype=np.bool_)
    out_b = np.empty(n_b, dtype=np.int64)
    out_h = np.empty(n_b, dtype=np.int64)
    out_p = np.empty(n_b, dtype=np.uint8)
    n_out = 0
    # stats: no_candidate, ambiguous_herald, ambiguous_path, unique, wrong_basis
    stats = np.zeros(5, dtype=np.int64)
    max_off = offsets[0]
    min_off = offsets[0]
    for p in range(1, 4):
        max_off = max(max_off, offsets[p])
        min_off = min(min_off, offsets[p])
    lo = 0
    for i in range(n_b):
        tb = b_times[i]
        while lo < h_times.size and (consumed[lo] or 2 * (tb - h_times[lo] - max_off) > window_ps):
            lo += 1
        n_heralds = 0
        pmask = 0
        m_h = -1
        m_p = 0
        k = lo
        while k < h_times.size and 2 * (tb - h_times[k] - min_off) >= -window_ps:
            if not consumed[k]:
                seen = False
                for p in range(4):
                    d2 = 2 * (tb - h_times[k] - offsets[p])
                    if -window_ps <= d2 <= window_ps:
                        if not seen:
                            n_heralds += 1
                            seen = True
                        pmask |= 1 << p
                        m_h = k
                        m_p = p
            k += 1
        if n_heralds == 0:
            stats[0] += 1
        elif n_heralds >= 2:
            stats[1] += 1
        elif _popcount4(pmask) >= 2:
            stats[2] += 1
        else:
            # Unique herald, unique path: the match stands, the herald is
            # spent — even if the basis filter then drops the event.
            stats[3] += 1
            consumed[m_h] = True
            if path_basis[m_p] != b_basis[i]:
                stats[4] += 1
            else:
                out_b[n_out] = i
                out_h[n_out] = m_h
                out_p[n_out] = m_p
                n_out += 1
    return out_b[:n_out], out_h[:n_out], out_p[:n_out], stats


def _check_bob_stream(bob: TagStream) -> None:
    if len(bob) and (bob.channels.min() < 1 or bob.channels.max() > 4):
        raise ConfigError("bob stream must contain detector channels 1..4 only")


def _assemble(herald: TagStream, bob: TagStream, cfg: SiftConfig, b_idx, h_idx, p_idx, stats_raw) -> SiftedKey:
    state_lut = cfg.table.state_array()
    state_idx = state_lut[p_idx]
    channel = bob.channels[b_idx]
    alice_bits = (state_idx & 1).astype(np.uint8)
    bob_bits = ((channel - 1) & 1).astype(np.uint8)
    n_unique = int(stats_raw[3])
    n_wrong = int(stats_raw[4])
    stats = SiftStats(
        n_bob_tags=len(bob),
        n_no_candidate=int(stats_raw[0]),
        n_ambiguous_herald=int(stats_raw[1]),
        n_ambiguous_path=int(stats_raw[2]),
        n_unique_match=n_unique,
        n_wrong_basis=n_wrong,
        n_retained=n_unique - n_wrong,
        per_state_retained=tuple(int(c) for c in np.bincount(state_idx, minlength=4)),
    )
    return SiftedKey(
        alice_bits=alice_bits,
        bob_bits=bob_bits,
        herald_ps=herald.times_ps[h_idx],
        bob_ps=bob.times_ps[b_idx],
        path_idx=p_idx.astype(np.uint8),
        state_idx=state_idx,
        channel=channel,
        herald_idx=h_idx,
        stats=stats,
    )


def sift(herald: TagStream, bob: TagStream, cfg: SiftConfig) -> SiftedKey:
    """Match Bob's tags to heralds by time difference and emit aligned bits.

    Bob tags are processed in stream order.  A tag is retained when its delay
    to exactly one unconsumed herald fits exactly one path's expected offset
    (within half a window, boundary inclusive) and that path's basis equals
    the detector basis.  Tags with no candidate, two candidate heralds, or two
    candidate paths are discarded; a unique match consumes its herald even
    when the basis filter rejects the event.
    """
    _check_bob_stream(bob)
    b_basis = ((bob.channels - 1) >> 1).astype(np.int64)
    path_basis = (cfg.table.state_array() >> 1).astype(np.int64)
    b_idx, h_idx, p_idx, stats_raw = _sift_core(
        herald.times_ps,
        bob.times_ps,
        b_basis,
        cfg.offset_array(),
        path_basis,
        cfg.window_ps,
    )
    return _assemble(herald, bob, cfg, b_idx, h_idx, p_idx, stats_raw)


def sift_bruteforce(herald: TagStream, bob: TagStream, cfg: SiftConfig) -> SiftedKey:
    """Reference sifting: exhaustive scan over every herald/tag/path triple.

    Same contract as sift, implemented with no pointer tricks; quadratic and
    intended for tests and small instances.
    """
    _check_bob_stream(bob)
    offsets = cfg.offset_array()
    path_basis = (cfg.table.state_array() >> 1).astype(np.int64)
    h_times = herald.times_ps
    consumed = [False] * len(herald)
    out_b, out_h, out_p = [], [], []
    stats_raw = np.zeros(5, dtype=np.int64)
    for i in range(len(bob)):
        tb = int(bob.times_ps[i])
        cand = [
            (k, p)
            for k in range(len(herald))
            if not consumed[k]
            for p in range(4)
            if 2 * abs(tb - int(h_times[k]) - int(offsets[p])) <= cfg.window_ps
        ]
        heralds = {k for k, _ in cand}
        paths = {p for _, p in cand}
        if not cand:
            stats_raw[0] += 1
        elif len(heralds) >= 2:
            stats_raw[1] += 1
        elif len(paths) >= 2:
            stats_raw[2] += 1
        else:
            stats_raw[3] += 1
            k, p = cand[-1]
            consumed[k] = True
            if path_basis[p] != (int(bob.channels[i]) - 1) >> 1:
                stats_raw[4] += 1
            else:
                out_b.append(i)
                out_h.append(k)
                out_p.append(p)
    return _assemble(
        herald,
        bob,
        cfg,
        np.array(out_b, dtype=np.int64),
        np.array(out_h, dtype=np.int64),
        np.array(out_p, dtype=np.uint8),
        stats_raw,
    )


@njit(cache=True)
def _histogram_core(h_times, b_times, lo_ps, hi_ps, bin_ps, counts):
    j0 = 0
    for i in range(h_times.size):
        t = h_times[i]
        while j0 < b_times.size and b_times[j0] - t < lo_ps:
            j0 += 1
        j = j0
        while j < b_times.size and b_times[j] - t < hi_ps:
            counts[(b_times[j] - t - lo_ps) // bin_ps] += 1
            j += 1


def correlation_histogram(
    herald: TagStream, bob: TagStream, lo_ps: int, hi_ps: int, bin_ps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of ALL Bob-minus-herald time differences in [lo_ps, hi_ps).

    This is the raw correlation trace whose four peaks sit at the per-path
    offsets; used for channel-delay calibration and diagnostic plots.

    Returns:
        (bin centers in ps, counts per bin).
    """
    if hi_ps <= lo_ps or bin_ps <= 0:
        raise ValueError("need hi_ps > lo_ps and bin_ps > 0")
    n_bins = -((lo_ps - hi_ps) // bin_ps)
    counts = np.zeros(n_bins, dtype=np.int64)
    _histogram_core(herald.times_ps, bob.times_ps, lo_ps, hi_ps, bin_ps, counts)
    centers = lo_ps + bin_ps * np.arange(n_bins, dtype=np.int64) + bin_ps // 2
    return centers, counts


def scan_channel_delay(
    herald: TagStream,
    bob: TagStream,
    table: PathDelayTable,
    herald_delay_ps: int,
    window_ps: int,
    deltas_ps,
) -> tuple[int, np.ndarray]:
    """Estimate the channel delay by scanning for the correlation maximum.

    For each candidate delay, counts one-to-one coincidences at all four path
    offsets and totals them; the candidate with the highest total wins (the
    earliest on ties).

    Returns:
        (best delta_ch_ps, per-candidate match totals).
    """
    deltas = np.asarray(deltas_ps, dtype=np.int64)
    totals = np.zeros(deltas.size, dtype=np.int64)
    for i, d in enumerate(deltas):
        for p in PATHS:
            off = table.delay_ps(p) + int(d) - herald_delay_ps
            totals[i] += count_coincidences(herald, bob, window_ps, off)
    return int(deltas[int(np.argmax(totals))]), totals


_CSV_FIELDS = ("herald_ps", "bob_ps", "path", "state", "detector", "alice_bit", "bob_bit")


def write_sifted(key: SiftedKey, path) -> None:
    """Persist a sifted key as CSV, one retained event per row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_CSV_FIELDS)
        for i in range(len(key)):
            w.writerow(
                (
                    int(key.herald_ps[i]),
                    int(key.bob_ps[i]),
                    PATHS[key.path_idx[i]],
                    PolarizationState(int(key.state_idx[i])).name,
                    int(key.channel[i]),
                    int(key.alice_bits[i]),
                    int(key.bob_bits[i]),
                )
            )


def read_sifted(path) -> SiftedKey:
    """Load a sifted-key CSV (herald indices and stats are not persisted)."""
    herald_ps, bob_ps, path_idx, state_idx, channel = [], [], [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != _CSV_FIELDS:
            raise ConfigError(f"unexpected sifted-key header in {path}: {header}")
        for row in reader:
            herald_ps.append(int(row[0]))
            bob_ps.append(int(row[1]))
            path_idx.append(PATHS.index(row[2]))
            state_idx.append(PolarizationState[row[3]].value)
            channel.append(int(row[4]))
    state = np.array(state_idx, dtype=np.uint8)
    chan = np.array(channel, dtype=np.uint8)
    return SiftedKey(
        alice_bits=state & 1,
        bob_bits=(chan - 1) & 1,
        herald_ps=np.array(herald_ps, dtype=np.int64),
        bob_ps=np.array(bob_ps, dtype=np.int64),
        path_idx=np.array(path_idx, dtype=np.uint8),
        state_idx=state,
        channel=chan,
    )
