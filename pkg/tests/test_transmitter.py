"""Encoder tests: state/bit maps, delay table invariants, routing statistics."""

import itertools

import numpy as np
import pytest
from scipy import stats

from heraldbb84.errors import ConfigError
from heraldbb84.source import Emissions, SourceParams, generate_emissions
from heraldbb84.transmitter import (
    PATHS,
    Basis,
    PathDelayTable,
    PhotonBatch,
    PolarizationState,
    TransmittedPhoton,
    encode,
    path_for_state,
)

H, V, D, A = PolarizationState


def test_state_basis_and_bit_maps():
    assert H.basis is Basis.RECTILINEAR and V.basis is Basis.RECTILINEAR
    assert D.basis is Basis.DIAGONAL and A.basis is Basis.DIAGONAL
    assert (H.bit, V.bit, D.bit, A.bit) == (0, 1, 0, 1)


def test_default_table_entries():
    t = PathDelayTable()
    assert (t.delay_ps("ac"), t.state_for("ac")) == (11_840, V)
    assert (t.delay_ps("ad"), t.state_for("ad")) == (8_800, A)
    assert (t.delay_ps("bc"), t.state_for("bc")) == (13_570, H)
    assert (t.delay_ps("bd"), t.state_for("bd")) == (10_520, D)


def test_path_for_state_inverts_table():
    t = PathDelayTable()
    assert path_for_state(t, H) == "bc"
    assert path_for_state(t, A) == "ad"
    assert path_for_state(t, V) == "ac"
    assert path_for_state(t, D) == "bd"
    for s in PolarizationState:
        assert t.state_for(path_for_state(t, s)) is s


def test_table_rejects_bad_configurations():
    with pytest.raises(ConfigError):
        PathDelayTable({"ac": (1, V), "ad": (2, A), "bc": (3, H)})
    with pytest.raises(ConfigError):
        PathDelayTable({"ac": (5, V), "ad": (5, A), "bc": (3, H), "bd": (4, D)})
    with pytest.raises(ConfigError):
        PathDelayTable({"ac": (1, V), "ad": (2, V), "bc": (3, H), "bd": (4, D)})


def test_delay_gaps():
    t = PathDelayTable()
    # Independent recomputation over explicit pairs.
    delays = {p: t.delay_ps(p) for p in PATHS}
    all_gaps = [abs(delays[p] - delays[q]) for p, q in itertools.combinations(PATHS, 2)]
    same_basis_gaps = [
        abs(delays[p] - delays[q])
        for p, q in itertools.combinations(PATHS, 2)
        if t.state_for(p).basis is t.state_for(q).basis
    ]
    assert t.min_delay_gap_ps() == min(all_gaps) == 1_320
    assert t.min_same_basis_gap_ps() == min(same_basis_gaps) == 1_720


def test_transmitted_photon_invariant():
    TransmittedPhoton(0, 100, H, 1)
    with pytest.raises(ValueError):
        TransmittedPhoton(100, 0, H, 1)


def test_forced_routes_follow_table():
    e = Emissions(np.array([0]), np.array([1]), 10**6)
    # bs1 -> "a", bs2 -> "c": path ac, state V, exit 11 840 ps.
    batch, rec = encode(e, PathDelayTable(), seed=1, bs1_transmit=1.0, bs2_transmit=1.0, bs3_transmit=1.0)
    assert rec.path(0) == "ac" and rec.state(0) is V
    assert batch.times_ps.tolist() == [11_840]
    # bs1 -> "b", bs2 -> "d": path bd, state D, exit 10 520 ps.
    batch, rec = encode(e, PathDelayTable(), seed=1, bs1_transmit=0.0, bs2_transmit=0.0, bs3_transmit=1.0)
    assert rec.path(0) == "bd" and rec.state(0) is D
    assert batch.times_ps.tolist() == [10_520]


def test_routing_statistics_and_survival():
    params = SourceParams(pair_rate_hz=1e6, multi_pair_prob=0.0)
    e = generate_emissions(params, 10**11, seed=20)
    n = len(e)
    batch, rec = encode(e, PathDelayTable(), seed=21)
    counts = rec.path_counts()
    sigma_path = np.sqrt(n * 0.25 * 0.75)
    for p in PATHS:
        assert abs(counts[p] - n / 4) < 3 * sigma_path
    # Chi-square uniformity at the 1% level.
    _, pvalue = stats.chisquare(list(counts.values()))
    assert pvalue > 0.01
    sigma_surv = np.sqrt(n * 0.25)
    assert abs(len(batch) - n / 2) < 3 * sigma_surv
    assert len(rec) == n
    assert len(batch) <= n


def test_exit_delays_come_from_table():
    e = generate_emissions(SourceParams(pair_rate_hz=1e5), 10**10, seed=22)
    batch, _ = encode(e, PathDelayTable(), seed=23)
    deltas = np.unique(batch.times_ps - batch.emit_times_ps)
    assert set(deltas.tolist()) <= {8_800, 10_520, 11_840, 13_570}
    assert np.all(np.diff(batch.times_ps) >= 0)


def test_exit_splitter_extremes():
    e = generate_emissions(SourceParams(pair_rate_hz=1e5), 10**10, seed=24)
    full, _ = encode(e, PathDelayTable(), seed=25, bs3_transmit=1.0)
    none, _ = encode(e, PathDelayTable(), seed=25, bs3_transmit=0.0)
    assert len(full) == len(e)
    assert len(none) == 0


def test_two_pair_slots_share_a_path():
    e = Emissions(np.arange(0, 10_000_000, 100_000, dtype=np.int64), np.full(100, 2, dtype=np.int8), 10**8)
    batch, rec = encode(e, PathDelayTable(), seed=26, bs3_transmit=1.0)
    # Lossless exit: each slot keeps both photons, and one delay per slot
    # means one path served both.
    assert len(batch) == 100
    assert np.all(batch.n_pairs == 2)
    assert np.array_equal(batch.times_ps - batch.emit_times_ps, PathDelayTable().delay_array()[rec.path_idx])


def test_encode_deterministic_under_seed():
    e = generate_emissions(SourceParams(pair_rate_hz=1e5), 10**10, seed=27)
    b1, r1 = encode(e, PathDelayTable(), seed=28)
    b2, r2 = encode(e, PathDelayTable(), seed=28)
    assert np.array_equal(b1.times_ps, b2.times_ps)
    assert np.array_equal(b1.state_idx, b2.state_idx)
    assert np.array_equal(r1.path_idx, r2.path_idx)


def test_encode_rejects_bad_bias():
    e = Emissions(np.array([0]), np.array([1]), 10**6)
    with pytest.raises(ConfigError):
        encode(e, PathDelayTable(), seed=1, bs1_transmit=1.5)


def test_batch_validation():
    with pytest.raises(ValueError):
        PhotonBatch(
            times_ps=np.array([5, 1]),
            state_idx=np.array([0, 0]),
            n_pairs=np.array([1, 1]),
            emit_times_ps=np.array([0, 0]),
            duration_ps=10,
        )
    with pytest.raises(ValueError):
        PhotonBatch(
            times_ps=np.array([1, 2]),
            state_idx=np.array([0, 9]),
            n_pairs=np.array([1, 1]),
            emit_times_ps=np.array([0, 0]),
            duration_ps=10,
        )
