"""Shared builders for sifting and end-to-end tests."""

import numpy as np

from heraldbb84.channel import ChannelParams, DetectorParams, detect, transmit
from heraldbb84.sifting import SiftConfig
from heraldbb84.source import SourceParams, generate_emissions, herald_stream
from heraldbb84.timetag import TagStream
from heraldbb84.transmitter import PathDelayTable, encode


def random_delay_table(rng):
    """A valid random codebook: distinct spaced delays, random state shuffle."""
    from heraldbb84.transmitter import PATHS, PolarizationState

    delays = int(rng.integers(4_000, 9_000)) + np.cumsum(rng.integers(900, 3_000, size=4))
    states = [PolarizationState(int(v)) for v in rng.permutation(4)]
    return PathDelayTable({p: (int(d), s) for p, d, s in zip(PATHS, delays, states)})


def make_sift_instance(rng, n_heralds=40, partner_prob=0.6, n_noise=30, jitter_ps=300,
                       window_ps=None, close_herald_prob=0.1, table=None):
    """Random sifting instance: heralds, a Bob stream of partners + junk, config.

    Partners sit near a random path's expected offset with Gaussian timing
    spread; noise tags land uniformly; occasional herald pairs are packed
    close together to provoke ambiguity handling.
    """
    duration = 50_000_000
    if table is None:
        table = PathDelayTable()
    max_window = min(1_700, table.min_same_basis_gap_ps())
    cfg = SiftConfig(
        window_ps=int(window_ps if window_ps is not None else rng.integers(500, max_window)),
        table=table,
    )
    offsets = cfg.offset_array()

    h = np.sort(rng.integers(0, duration // 2, size=n_heralds))
    close = h[rng.random(n_heralds) < close_herald_prob]
    if close.size:
        h = np.sort(np.concatenate([h, close + rng.integers(-2_000, 2_001, size=close.size)]))
    h = h[h >= 0]
    herald = TagStream(h, np.zeros(h.size, dtype=np.uint8), duration)

    bob_times, bob_chans = [], []
    for t in h[rng.random(h.size) < partner_prob]:
        p = int(rng.integers(0, 4))
        tb = int(t + offsets[p] + round(rng.normal(0, jitter_ps)))
        if 0 <= tb <= duration:
            bob_times.append(tb)
            bob_chans.append(int(rng.integers(1, 5)))
    for _ in range(n_noise):
        bob_times.append(int(rng.integers(0, duration)))
        bob_chans.append(int(rng.integers(1, 5)))
    bt = np.array(bob_times, dtype=np.int64)
    bc = np.array(bob_chans, dtype=np.uint8)
    order = np.lexsort((bc, bt))
    bob = TagStream(bt[order], bc[order], duration)
    return herald, bob, cfg


def run_optical_chain(source_params, table, channel_params, detector_params, duration_ps, seed):
    """Full simulator chain: emissions -> heralds + Bob's detection stream."""
    ss = np.random.SeedSequence(seed)
    s_em, s_her, s_enc, s_ch, s_det = ss.spawn(5)
    emissions = generate_emissions(source_params, duration_ps, s_em)
    herald = herald_stream(emissions, source_params, s_her)
    batch, record = encode(emissions, table, s_enc)
    arrivals = transmit(batch, channel_params, s_ch)
    bob = detect(arrivals, detector_params, channel_params, duration_ps, s_det)
    return emissions, herald, record, bob


NOISELESS_DETECTOR = DetectorParams(
    efficiency=1.0, dark_rate_hz=0.0, jitter_sigma_ps=0.0, tdc_resolution_ps=81, dead_time_ps=0
)

NOISELESS_CHANNEL = ChannelParams(
    transmittance=1.0, coupling_efficiency=1.0, delta_ch_ps=2_500, misalignment_prob=0.0
)

__all__ = [
    "make_sift_instance",
    "random_delay_table",
    "run_optical_chain",
    "NOISELESS_DETECTOR",
    "NOISELESS_CHANNEL",
    "SourceParams",
    "PathDelayTable",
]
