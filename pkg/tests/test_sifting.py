"""Sifting tests: offset arithmetic, match/discard rules, oracle equivalence."""

import numpy as np
import pytest
from support import NOISELESS_CHANNEL, NOISELESS_DETECTOR, make_sift_instance, run_optical_chain

from heraldbb84.errors import ConfigError
from heraldbb84.sifting import (
    SiftConfig,
    SiftedKey,
    correlation_histogram,
    expected_offset,
    read_sifted,
    scan_channel_delay,
    sift,
    sift_bruteforce,
    write_sifted,
)
from heraldbb84.source import SourceParams
from heraldbb84.timetag import TagStream
from heraldbb84.transmitter import PATHS, PathDelayTable

DUR = 10**8


def heralds(*times, duration=DUR):
    t = np.array(times, dtype=np.int64)
    return TagStream(t, np.zeros(t.size, dtype=np.uint8), duration)


def bob_tags(pairs, duration=DUR):
    t = np.array([p[0] for p in pairs], dtype=np.int64)
    c = np.array([p[1] for p in pairs], dtype=np.uint8)
    order = np.lexsort((c, t))
    return TagStream(t[order], c[order], duration)


def assert_keys_equal(a: SiftedKey, b: SiftedKey):
    for f in ("alice_bits", "bob_bits", "herald_ps", "bob_ps", "path_idx", "state_idx", "channel", "herald_idx"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert a.stats == b.stats


def test_expected_offset_arithmetic():
    cfg = SiftConfig()
    # 11 840 + 2 500 - 3 070
    assert expected_offset(cfg, "ac") == 11_270
    cfg0 = SiftConfig(delta_ch_ps=0, herald_delay_ps=0)
    assert expected_offset(cfg0, "ad") == 8_800
    cancel = SiftConfig(delta_ch_ps=0, herald_delay_ps=8_800)
    assert expected_offset(cancel, "ad") == 0


def test_window_guard_against_delay_gaps():
    SiftConfig(window_ps=1_500)  # fine: below the 1 720 ps same-basis gap
    with pytest.raises(ConfigError):
        SiftConfig(window_ps=1_800)
    with pytest.raises(ConfigError):
        SiftConfig(window_ps=1_720)  # equality is still ambiguous at the edge
    with pytest.raises(ConfigError):
        SiftConfig(window_ps=0)


def test_single_clean_match():
    key = sift(heralds(1_000_000), bob_tags([(1_011_270, 2)]), SiftConfig())
    assert len(key) == 1
    assert PATHS[key.path_idx[0]] == "ac"
    assert key.state_idx[0] == 1  # V
    assert (key.alice_bits[0], key.bob_bits[0]) == (1, 1)
    assert key.stats.n_retained == 1 and key.stats.n_unique_match == 1
    assert key.stats.per_state_retained == (0, 1, 0, 0)


def test_empty_bob_stream():
    key = sift(heralds(1_000_000), TagStream.empty(DUR), SiftConfig())
    assert len(key) == 0
    assert key.stats.n_bob_tags == 0


def test_unmatched_tag_discarded():
    key = sift(heralds(1_000_000), bob_tags([(1_005_000, 2)]), SiftConfig())
    assert len(key) == 0
    assert key.stats.n_no_candidate == 1


def test_wrong_basis_discards_but_consumes_herald():
    # First tag matches path ac (state V, rectilinear) on a diagonal detector:
    # discarded, herald spent.  Second tag would match the same herald.
    key = sift(heralds(1_000_000), bob_tags([(1_011_270, 3), (1_011_600, 2)]), SiftConfig())
    assert len(key) == 0
    assert key.stats.n_unique_match == 1
    assert key.stats.n_wrong_basis == 1
    assert key.stats.n_no_candidate == 1


def test_two_candidate_heralds_discard_without_consuming():
    # Both heralds match each tag; if the first discard consumed one, the
    # second tag would sift cleanly — it must not.
    h = heralds(1_000_000, 1_000_400)
    key = sift(h, bob_tags([(1_011_470, 2), (1_011_490, 2)]), SiftConfig())
    assert len(key) == 0
    assert key.stats.n_ambiguous_herald == 2


def test_two_candidate_paths_discard_without_consuming():
    # 10 600 ps after the herald sits inside both the ac (11 270) and bd
    # (9 950) windows -> path-ambiguous.  The herald survives for the next tag.
    key = sift(heralds(1_000_000), bob_tags([(1_010_600, 2), (1_011_270, 2)]), SiftConfig())
    assert key.stats.n_ambiguous_path == 1
    assert key.stats.n_retained == 1
    assert len(key) == 1


def test_herald_consumed_at_most_once():
    key = sift(heralds(1_000_000), bob_tags([(1_011_270, 2), (1_011_800, 2)]), SiftConfig())
    assert len(key) == 1
    assert key.stats.n_no_candidate == 1


def test_sift_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(424242)
    for _ in range(120):
        herald, bob, cfg = make_sift_instance(
            rng,
            n_heralds=int(rng.integers(5, 120)),
            n_noise=int(rng.integers(0, 80)),
            close_herald_prob=0.25,
        )
        assert_keys_equal(sift(herald, bob, cfg), sift_bruteforce(herald, bob, cfg))


def test_no_herald_index_repeats():
    rng = np.random.default_rng(5150)
    herald, bob, cfg = make_sift_instance(rng, n_heralds=400, n_noise=300, close_herald_prob=0.3)
    key = sift(herald, bob, cfg)
    assert len(key) > 0
    assert np.unique(key.herald_idx).size == len(key)


def test_basis_match_fraction_is_half():
    rng = np.random.default_rng(606)
    n = 20_000
    h = np.arange(1, n + 1, dtype=np.int64) * 50_000
    cfg = SiftConfig()
    offsets = cfg.offset_array()
    paths = rng.integers(0, 4, size=n)
    bt = h + offsets[paths]
    bc = rng.integers(1, 5, size=n).astype(np.uint8)
    order = np.lexsort((bc, bt))
    dur = int(bt.max() + 10_000)
    key = sift(
        TagStream(h, np.zeros(n, dtype=np.uint8), dur),
        TagStream(bt[order], bc[order], dur),
        cfg,
    )
    assert key.stats.n_unique_match == n
    frac = key.stats.n_retained / n
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / n)


def test_sifted_count_grows_with_window():
    rng = np.random.default_rng(77)
    herald, bob, _ = make_sift_instance(
        rng, n_heralds=600, partner_prob=0.9, n_noise=5, jitter_ps=300,
        window_ps=1_500, close_herald_prob=0.0,
    )
    counts = [
        len(sift(herald, bob, SiftConfig(window_ps=w))) for w in (300, 700, 1_100, 1_500)
    ]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


def test_scan_recovers_channel_delay():
    rng = np.random.default_rng(88)
    n = 10_000
    h = np.arange(1, n + 1, dtype=np.int64) * 100_000
    cfg = SiftConfig(delta_ch_ps=2_500)
    offsets = cfg.offset_array()
    bt = h + offsets[rng.integers(0, 4, size=n)] + np.rint(rng.normal(0, 300, n)).astype(np.int64)
    bt = np.sort(bt)
    dur = int(bt.max() + 10_000)
    herald = TagStream(h, np.zeros(n, dtype=np.uint8), dur)
    bob = TagStream(bt, np.full(n, 1, dtype=np.uint8), dur)
    best, totals = scan_channel_delay(
        herald, bob, PathDelayTable(), herald_delay_ps=3_070, window_ps=1_500,
        deltas_ps=np.arange(0, 5_001, 100),
    )
    assert abs(best - 2_500) <= 200
    assert totals.max() == totals[np.arange(0, 5_001, 100).tolist().index(best)]


def test_correlation_histogram_peaks_at_path_offsets():
    rng = np.random.default_rng(99)
    n = 8_000
    h = np.arange(1, n + 1, dtype=np.int64) * 100_000
    cfg = SiftConfig()
    offsets = cfg.offset_array()
    bt = np.sort(h + offsets[rng.integers(0, 4, size=n)] + np.rint(rng.normal(0, 300, n)).astype(np.int64))
    dur = int(bt.max() + 10_000)
    herald = TagStream(h, np.zeros(n, dtype=np.uint8), dur)
    bob = TagStream(bt, np.full(n, 2, dtype=np.uint8), dur)
    centers, counts = correlation_histogram(herald, bob, 7_000, 16_000, 100)
    assert counts.sum() >= 0.995 * n  # essentially every partner difference in range
    near_peaks = np.zeros(centers.size, dtype=bool)
    for off in offsets:
        near_peaks |= np.abs(centers - off) <= 650
    assert counts[near_peaks].sum() >= 0.9 * counts.sum()


def test_accidental_match_rate_matches_analytic():
    # Dark-count-only Bob stream: retained events are pure accidentals.  The
    # expected count is N_dark x P(exactly one herald in the 4-window union)
    # x P(single path) x P(basis match).
    rng = np.random.default_rng(314)
    duration = 10**12
    herald_rate = 1e6
    n_h = rng.poisson(herald_rate)
    h = np.sort(rng.integers(0, duration, size=n_h))
    n_d = rng.poisson(4 * 50_000)
    bt = np.sort(rng.integers(0, duration, size=n_d))
    bc = rng.integers(1, 5, size=n_d).astype(np.uint8)
    cfg = SiftConfig()
    key = sift(
        TagStream(h, np.zeros(n_h, dtype=np.uint8), duration),
        TagStream(bt, bc, duration),
        cfg,
    )
    lam = n_h / duration  # heralds per ps
    win_pts = cfg.window_ps // 2 * 2 + 1  # integer offsets accepted per path
    gaps = np.abs(cfg.offset_array()[:, None] - cfg.offset_array()[None, :])
    overlap = int(np.sum(np.triu(np.maximum(win_pts - gaps, 0), k=1)))
    union = 4 * win_pts - overlap
    lam_u = lam * union
    expect = n_d * lam_u * np.exp(-lam_u) * (1 - overlap / union) * 0.5
    assert abs(len(key) - expect) < 3 * np.sqrt(expect)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1234)
    herald, bob, cfg = make_sift_instance(rng, n_heralds=200, n_noise=50)
    key = sift(herald, bob, cfg)
    assert len(key) > 10
    p = tmp_path / "sifted.csv"
    write_sifted(key, p)
    back = read_sifted(p)
    for f in ("alice_bits", "bob_bits", "herald_ps", "bob_ps", "path_idx", "state_idx", "channel"):
        assert np.array_equal(getattr(back, f), getattr(key, f)), f
    assert back.stats is None and back.herald_idx is None


def test_read_sifted_rejects_foreign_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_sifted(p)


def test_sifted_key_validation():
    mk = dict(
        herald_ps=np.array([10]),
        bob_ps=np.array([20]),
        path_idx=np.array([0]),
        channel=np.array([2]),
    )
    SiftedKey(alice_bits=np.array([1]), bob_bits=np.array([1]), state_idx=np.array([1]), **mk)
    with pytest.raises(ValueError):  # V state on a diagonal detector
        SiftedKey(alice_bits=np.array([1]), bob_bits=np.array([0]), state_idx=np.array([1]),
                  herald_ps=np.array([10]), bob_ps=np.array([20]), path_idx=np.array([0]),
                  channel=np.array([3]))
    with pytest.raises(ValueError):  # alice bit contradicts state
        SiftedKey(alice_bits=np.array([0]), bob_bits=np.array([1]), state_idx=np.array([1]), **mk)
    with pytest.raises(ValueError):  # length mismatch
        SiftedKey(alice_bits=np.array([1, 0]), bob_bits=np.array([1]), state_idx=np.array([1]), **mk)


def test_noiseless_chain_sifts_with_zero_errors():
    src = SourceParams(pair_rate_hz=200_000.0, herald_efficiency=0.8, multi_pair_prob=0.0)
    det = NOISELESS_DETECTOR
    emissions, herald, record, bob = run_optical_chain(
        src, PathDelayTable(), NOISELESS_CHANNEL, det, 10**9, seed=2026
    )
    key = sift(herald, bob, SiftConfig())
    assert len(key) > 20
    assert key.error_fraction() == 0.0
    # Every identified state equals the state Alice actually encoded.
    emit_times = key.herald_ps - 3_070
    idx = np.searchsorted(record.emit_times_ps, emit_times)
    assert np.array_equal(record.emit_times_ps[idx], emit_times)
    assert np.array_equal(record.state_idx[idx], key.state_idx)
