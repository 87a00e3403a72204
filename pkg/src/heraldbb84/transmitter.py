"""Alice's passive encoder.

Two cascaded 50:50 splitters route each idler photon onto one of four paths
(ac, ad, bc, bd).  Each path applies a distinct optical delay and a fixed
polarization, so the delay itself carries the encoding — known only to the
holder of the delay table.  The recombining splitter at the exit transmits
half of the photons toward the channel; the other half is lost (single-photon
interference does not occur there, the path delays exceed the coherence time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError

__all__ = [
    "Basis",
    "PolarizationState",
    "PATHS",
    "PathDelayTable",
    "TransmittedPhoton",
    "PhotonBatch",
    "AliceRecord",
    "encode",
    "path_for_state",
    "write_alice_record",
    "read_alice_record",
]


class Basis(Enum):
    RECTILINEAR = 0
    DIAGONAL = 1


class PolarizationState(Enum):
    """The four encoded states; value doubles as detector-channel index − 1."""

    H = 0
    V = 1
    D = 2
    A = 3

    @property
    def basis(self) -> Basis:
        return Basis(self.value >> 1)

    @property
    def bit(self) -> int:
        """Key-bit convention: H and D encode 0, V and A encode 1."""
        return self.value & 1


PATHS = ("ac", "ad", "bc", "bd")

_DEFAULT_ENTRIES = {
    "ac": (11_840, PolarizationState.V),
    "ad": (8_800, PolarizationState.A),
    "bc": (13_570, PolarizationState.H),
    "bd": (10_520, PolarizationState.D),
}


@dataclass(frozen=True)
class PathDelayTable:
    """Per-path (delay, polarization) assignment — Alice's private codebook.

    Attributes:
        entries: mapping path -> (delay_ps, PolarizationState) for exactly the
            four paths ac, ad, bc, bd.
    """

    entries: dict = field(default_factory=lambda: dict(_DEFAULT_ENTRIES))

    def __post_init__(self):
        if set(self.entries) != set(PATHS):
            raise ConfigError(f"table must define exactly the paths {PATHS}, got {sorted(self.entries)}")
        delays = [int(self.entries[p][0]) for p in PATHS]
        states = [self.entries[p][1] for p in PATHS]
        if len(set(delays)) != 4:
            raise ConfigError(f"path delays must be pairwise distinct, got {delays}")
        if set(states) != set(PolarizationState):
            raise ConfigError("path polarizations must be a permutation of H, V, D, A")
        if min(delays) < 0:
            raise ConfigError("path delays must be >= 0")

    def delay_ps(self, path: str) -> int:
        return int(self.entries[path][0])

    def state_for(self, path: str) -> PolarizationState:
        return self.entries[path][1]

    def min_delay_gap_ps(self) -> int:
        """Smallest |delay difference| over all path pairs."""
        delays = sorted(self.delay_ps(p) for p in PATHS)
        return min(b - a for a, b in zip(delays, delays[1:]))

    def min_same_basis_gap_ps(self) -> int:
        """Smallest |delay difference| between two paths sharing a basis.

        This is the gap that bounds the usable sifting window: a confusion
        between paths of DIFFERENT bases is caught by the basis filter or the
        ambiguity discard, but two same-basis paths closer than the window
        could silently swap bit values.
        """
        gaps = []
        for i, p in enumerate(PATHS):
            for q in PATHS[i + 1 :]:
                if self.state_for(p).basis == self.state_for(q).basis:
                    gaps.append(abs(self.delay_ps(p) - self.delay_ps(q)))
        return min(gaps)

    def delay_array(self) -> np.ndarray:
        """Delays indexed by path position in PATHS."""
        return np.array([self.delay_ps(p) for p in PATHS], dtype=np.int64)

    def state_array(self) -> np.ndarray:
        """PolarizationState values indexed by path position in PATHS."""
        return np.array([self.state_for(p).value for p in PATHS], dtype=np.uint8)


def path_for_state(table: PathDelayTable, state: PolarizationState) -> str:
    """Inverse lookup: the unique path that encodes the given state."""
    for p in PATHS:
        if table.state_for(p) is state:
            return p
    raise KeyError(state)  # unreachable for a valid table


@dataclass(frozen=True)
class TransmittedPhoton:
    """One photon leaving Alice: creation and exit times, state, multiplicity."""

    emit_time_ps: int
    exit_time_ps: int
    state: PolarizationState
    n_pairs: int

    def __post_init__(self):
        if self.exit_time_ps < self.emit_time_ps:
            raise ValueError("exit_time_ps must be >= emit_time_ps")


@dataclass(frozen=True)
class PhotonBatch:
    """Array-backed photon sequence at one interface of the optical chain.

    ``times_ps`` is the timestamp at that interface (exit of Alice, or arrival
    at Bob after the channel shift); it may legitimately extend past the
    acquisition duration — out-of-range events are dropped at detection.
    """

    times_ps: np.ndarray
    state_idx: np.ndarray
    n_pairs: np.ndarray
    emit_times_ps: np.ndarray
    duration_ps: int

    def __post_init__(self):
        times = np.ascontiguousarray(self.times_ps, dtype=np.int64)
        sidx = np.ascontiguousarray(self.state_idx, dtype=np.uint8)
        pairs = np.ascontiguousarray(self.n_pairs, dtype=np.int8)
        emit = np.ascontiguousarray(self.emit_times_ps, dtype=np.int64)
        for name, arr in (("state_idx", sidx), ("n_pairs", pairs), ("emit_times_ps", emit)):
            if arr.shape != times.shape:
                raise ValueError(f"{name} must match times_ps in length")
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("photon times must be sorted")
        if sidx.size and sidx.max() > 3:
            raise ValueError("state_idx must be in 0..3")
        for name, arr in (("times_ps", times), ("state_idx", sidx), ("n_pairs", pairs), ("emit_times_ps", emit)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.times_ps.size)

    def __getitem__(self, i) -> TransmittedPhoton:
        return TransmittedPhoton(
            emit_time_ps=int(self.emit_times_ps[i]),
            exit_time_ps=int(self.times_ps[i]),
            state=PolarizationState(int(self.state_idx[i])),
            n_pairs=int(self.n_pairs[i]),
        )


@dataclass(frozen=True)
class AliceRecord:
    """Alice's private log: every emission with its chosen path and state.

    Kept for ALL emissions, including photons later lost at the exit splitter
    or in the channel — Alice knows what she encoded regardless of what
    survived.
    """

    emit_times_ps: np.ndarray
    path_idx: np.ndarray
    state_idx: np.ndarray

    def __post_init__(self):
        emit = np.ascontiguousarray(self.emit_times_ps, dtype=np.int64)
        pidx = np.ascontiguousarray(self.path_idx, dtype=np.uint8)
        sidx = np.ascontiguousarray(self.state_idx, dtype=np.uint8)
        if emit.shape != pidx.shape or emit.shape != sidx.shape:
            raise ValueError("record arrays must have equal length")
        for name, arr in (("emit_times_ps", emit), ("path_idx", pidx), ("state_idx", sidx)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.emit_times_ps.size)

    def path(self, i: int) -> str:
        return PATHS[int(self.path_idx[i])]

    def state(self, i: int) -> PolarizationState:
        return PolarizationState(int(self.state_idx[i]))

    def path_counts(self) -> dict[str, int]:
        counts = np.bincount(self.path_idx, minlength=4)
        return {p: int(c) for p, c in zip(PATHS, counts)}


def encode(
    emissions,
    table: PathDelayTable,
    seed,
    *,
    bs1_transmit: float = 0.5,
    bs2_transmit: float = 0.5,
    bs3_transmit: float = 0.5,
) -> tuple[PhotonBatch, AliceRecord]:
    """Route emissions through the encoder and apply the exit-splitter loss.

    Each emission picks a path via two independent splitter coins (defaults
    50:50, biases exposed for sensitivity studies); both photons of a two-pair
    slot take the same path, being indistinguishable at the splitter time
    scale.  Photons then survive the exit splitter independently with
    probability ``bs3_transmit``.

    Args:
        emissions: sorted emission sequence (idler side).
        table: path delay/polarization assignment.
        seed: RNG seed or Generator.
        bs1_transmit: probability the first splitter routes to the "a" arm.
        bs2_transmit: probability the second splitter routes to the "c" arm.
        bs3_transmit: per-photon survival at the exit splitter.

    Returns:
        (surviving photons sorted by exit time, Alice's full private record).
    """
    for name, p in (("bs1_transmit", bs1_transmit), ("bs2_transmit", bs2_transmit), ("bs3_transmit", bs3_transmit)):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    n = len(emissions)
    arm_b = rng.random(n) >= bs1_transmit
    arm_d = rng.random(n) >= bs2_transmit
    pidx = (arm_b.astype(np.uint8) << 1) | arm_d.astype(np.uint8)
    states = table.state_array()[pidx]
    record = AliceRecord(emissions.times_ps, pidx, states)

    survivors = rng.binomial(emissions.n_pairs.astype(np.int64), bs3_transmit).astype(np.int8)
    keep = survivors > 0
    exit_times = emissions.times_ps[keep] + table.delay_array()[pidx[keep]]
    order = np.argsort(exit_times, kind="stable")
    batch = PhotonBatch(
        times_ps=exit_times[order],
        state_idx=states[keep][order],
        n_pairs=survivors[keep][order],
        emit_times_ps=emissions.times_ps[keep][order],
        duration_ps=emissions.duration_ps,
    )
    return batch, record


def write_alice_record(record: AliceRecord, path) -> None:
    """Persist the private encoding log as CSV (emit_time_ps, path, state)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("emit_time_ps", "path", "state"))
        for i in range(len(record)):
            w.writerow((int(record.emit_times_ps[i]), record.path(i), record.state(i).name))


def read_alice_record(path) -> AliceRecord:
    emit, pidx, sidx = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != ("emit_time_ps", "path", "state"):
            raise ConfigError(f"unexpected encoding-log header in {path}: {header}")
        for row in reader:
            emit.append(int(row[0]))
            pidx.append(PATHS.index(row[1]))
            sidx.append(PolarizationState[row[2]].value)
    return AliceRecord(
        np.array(emit, dtype=np.int64),
        np.array(pidx, dtype=np.uint8),
        np.array(sidx, dtype=np.uint8),
    )
