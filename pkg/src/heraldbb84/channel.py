"""Free-space channel and Bob's passive-basis receiver.

The channel applies loss (transmittance x fiber coupling), a fixed propagation
delay, and nothing else — it is a short indoor path.  At Bob, a 50:50 splitter
picks the measurement basis passively; polarizing optics route the photon to
one of four detectors (H, V, D, A on channels 1-4).  Detection applies
efficiency, Gaussian timing jitter, TDC quantization, per-detector dark counts,
and a non-paralyzable per-detector dead time, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError
from .timetag import TagStream
from .transmitter import PhotonBatch

__all__ = [
    "ChannelParams",
    "DetectorParams",
    "transmit",
    "detect",
    "click_stream",
]


@dataclass(frozen=True)
class ChannelParams:
    """Free-space link parameters.

    Attributes:
        transmittance: channel power transmittance.
        coupling_efficiency: multimode-fiber coupling at the receiver.
        delta_ch_ps: fixed propagation delay, emitter exit to detector.
        misalignment_prob: probability a matched-basis photon lands on the
            wrong detector of that basis — the single lumped error source that
            generates the quantum bit error rate.  The default is the output
            of the tuning procedure in the calibration module (target: 7%
            error rate at the shipped source settings).
        state_coupling: optional per-state (H, V, D, A) coupling multipliers,
            all 1 by default; lets a config depress one polarization's counts.
    """

    transmittance: float = 0.98
    coupling_efficiency: float = 0.85
    delta_ch_ps: int = 2_500
    misalignment_prob: float = 0.0644
    state_coupling: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("transmittance", "coupling_efficiency", "misalignment_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.delta_ch_ps < 0:
            raise ConfigError(f"delta_ch_ps must be >= 0, got {self.delta_ch_ps}")
        if len(self.state_coupling) != 4 or any(not 0.0 <= c <= 1.0 for c in self.state_coupling):
            raise ConfigError("state_coupling must be four values in [0, 1]")


@dataclass(frozen=True)
class DetectorParams:
    """Single-photon detector and time-tagger parameters."""

    efficiency: float = 0.65
    dark_rate_hz: float = 100.0
    jitter_sigma_ps: float = 350.0
    tdc_resolution_ps: int = 81
    dead_time_ps: int = 22_000

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError(f"efficiency must be in [0, 1], got {self.efficiency}")
        for name in ("dark_rate_hz", "jitter_sigma_ps", "dead_time_ps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.tdc_resolution_ps < 1:
            raise ConfigError(f"tdc_resolution_ps must be >= 1, got {self.tdc_resolution_ps}")


def transmit(photons: PhotonBatch, ch: ChannelParams, seed) -> PhotonBatch:
    """Propagate photons to Bob: loss, then the fixed channel delay.

    Each photon survives independently with probability
    ``transmittance x coupling_efficiency x state_coupling[state]``; a
    two-photon slot can lose one and keep the other.  Arrival order is
    preserved (the delay is common to all photons).
    """
    rng = np.random.default_rng(seed)
    p = ch.transmittance * ch.coupling_efficiency * np.asarray(ch.state_coupling)[photons.state_idx]
    survivors = rng.binomial(photons.n_pairs.astype(np.int64), p).astype(np.int8)
    keep = survivors > 0
    return PhotonBatch(
        times_ps=photons.times_ps[keep] + ch.delta_ch_ps,
        state_idx=photons.state_idx[keep],
        n_pairs=survivors[keep],
        emit_times_ps=photons.emit_times_ps[keep],
        duration_ps=photons.duration_ps,
    )


@njit(cache=True)
def _dead_time_keep(times: np.ndarray, dead_time_ps: int) -> np.ndarray:
    # Non-paralyzable: a click within dead_time of the previous KEPT click is
    # suppressed and does not extend the dead window.
    keep = np.ones(times.size, dtype=np.bool_)
    if times.size == 0 or dead_time_ps <= 0:
        return keep
    last = times[0]
    for i in range(1, times.size):
        if times[i] - last < dead_time_ps:
            keep[i] = False
        else:
            last = times[i]
    return keep


def _register(rng, times_ps: np.ndarray, det: DetectorParams, duration_ps: int) -> np.ndarray:
    """One detector's electronics chain: efficiency, jitter, TDC grid, darks,
    dead time.  Returns sorted kept timestamps."""
    t = times_ps[rng.random(times_ps.size) < det.efficiency]
    if det.jitter_sigma_ps > 0 and t.size:
        t = t + np.rint(rng.normal(0.0, det.jitter_sigma_ps, t.size)).astype(np.int64)
    t = t[t >= 0]
    dark_mean = det.dark_rate_hz * duration_ps * 1e-12
    if dark_mean > 0:
        n_dark = rng.poisson(dark_mean)
        if n_dark:
            t = np.concatenate([t, rng.integers(0, duration_ps + 1, size=n_dark, dtype=np.int64)])
    res = det.tdc_resolution_ps
    if res > 1:
        t = (t + res // 2) // res * res
    t = t[t <= duration_ps]
    t.sort()
    return t[_dead_time_keep(t, det.dead_time_ps)]


def detect(
    arrivals: PhotonBatch,
    det: DetectorParams,
    ch: ChannelParams,
    duration_ps: int,
    seed,
) -> TagStream:
    """Measure arriving photons behind the passive basis choice.

    Per photon: a fair coin picks the basis; a matched-basis photon clicks its
    own detector except with ``misalignment_prob`` (the partner detector of the
    same basis), while a mismatched-basis photon clicks either detector of the
    chosen basis with probability 1/2.  The four detector chains then apply
    efficiency, jitter, quantization, dark counts, and dead time independently;
    the merged stream is sorted with ties broken by channel.
    """
    rng = np.random.default_rng(seed)
    times = np.repeat(arrivals.times_ps, arrivals.n_pairs)
    sidx = np.repeat(arrivals.state_idx, arrivals.n_pairs)
    n = times.size

    chosen_basis = (rng.random(n) < 0.5).astype(np.uint8)  # 0 rectilinear, 1 diagonal
    matched = chosen_basis == (sidx >> 1)
    flip = rng.random(n) < ch.misalignment_prob
    coin = (rng.random(n) < 0.5).astype(np.uint8)
    det_idx = np.where(matched, sidx ^ flip, (chosen_basis << 1) | coin).astype(np.uint8)

    out_times = []
    out_chans = []
    for d in range(4):
        kept = _register(rng, times[det_idx == d], det, duration_ps)
        out_times.append(kept)
        out_chans.append(np.full(kept.size, d + 1, dtype=np.uint8))
    all_times = np.concatenate(out_times)
    all_chans = np.concatenate(out_chans)
    order = np.lexsort((all_chans, all_times))
    return TagStream(all_times[order], all_chans[order], duration_ps)


def click_stream(times_ps, channel: int, det: DetectorParams, duration_ps: int, seed) -> TagStream:
    """Run bare photon times through one detector chain (no polarization optics).

    Used for the correlation bench, where each splitter output feeds a plain
    detector.
    """
    t = np.ascontiguousarray(times_ps, dtype=np.int64)
    rng = np.random.default_rng(seed)
    kept = _register(rng, t, det, duration_ps)
    return TagStream(kept, np.full(kept.size, channel, dtype=np.uint8), duration_ps)
