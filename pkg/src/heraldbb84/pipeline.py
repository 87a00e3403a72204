"""Stage orchestration: simulate → sift → qber → reconcile → amplify → report.

Every stage reads its inputs from files written by the previous stage and
writes its own artifacts under the output directory, so each one can also run
standalone on persisted intermediates.  Per-stage randomness comes from
hashing the master seed together with the stage name — stages stay
reproducible independently of each other.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .channel import detect, transmit
from .config import PipelineConfig
from .g2 import (
    compute_rates,
    format_rates,
    g2_sweep,
    g2_zero,
    multiphoton_fraction_bound,
    simulate_hbt,
    write_g2_csv,
)
from .postproc import (
    KeyRateReport,
    ToeplitzSeed,
    estimate_qber,
    ldpc_syndrome,
    make_regular_code,
    parse_report,
    read_key_bits,
    reconcile_blocks,
    secure_key_length,
    toeplitz_extract,
    verify_keys,
    write_key_bits,
    write_report,
    write_report_csv,
)
from .sifting import read_sifted, sift, write_sifted
from .source import generate_emissions, herald_stream, idler_emissions
from .timetag import read_tags, write_tags
from .transmitter import encode, write_alice_record

__all__ = [
    "HERALD_FILE",
    "BOB_FILE",
    "ALICE_RECORD_FILE",
    "SIFTED_FILE",
    "KEPT_FILE",
    "RECONCILED_FILE",
    "KEY_FILE",
    "REPORT_FILE",
    "REPORT_CSV_FILE",
    "G2_FILE",
    "FAILURE_MARKER",
    "PipelineError",
    "stage_seed",
    "stage_simulate",
    "stage_sift",
    "stage_qber",
    "stage_reconcile",
    "stage_amplify",
    "stage_report",
    "stage_g2",
    "run_pipeline",
]

HERALD_FILE = "herald.qtag"
BOB_FILE = "bob.qtag"
ALICE_RECORD_FILE = "alice_record.csv"
SIFTED_FILE = "sifted.csv"
SIFT_STATS_FILE = "sift_stats.txt"
QBER_FILE = "qber.txt"
KEPT_FILE = "kept.csv"
RECONCILED_FILE = "reconciled.bin"
RECONCILE_STATS_FILE = "reconcile_stats.txt"
AMPLIFY_STATS_FILE = "amplify_stats.txt"
KEY_FILE = "key.bin"
REPORT_FILE = "report.txt"
REPORT_CSV_FILE = "report.csv"
G2_FILE = "g2.csv"
G2_RATES_FILE = "g2_rates.txt"
HBT_HERALD_FILE = "hbt_herald.qtag"
HBT_I1_FILE = "hbt_i1.qtag"
HBT_I2_FILE = "hbt_i2.qtag"
FAILURE_MARKER = "PIPELINE_FAILED.txt"

#: Error probability handed to the decoder when the estimate sits on a
#: boundary the log-likelihood mapping cannot represent.
_DECODER_QBER_FLOOR = 1e-4
_DECODER_QBER_CEIL = 0.499


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name alongside the cause."""

    def __init__(self, stage: str, cause: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {cause}")


def stage_seed(master_seed: int, stage: str) -> np.random.SeedSequence:
    """Derive one stage's seed by hashing the master seed with the stage name."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def _write_kv(path: Path, values: dict) -> None:
    with open(path, "w") as f:
        for k, v in values.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            f.write(f"{k}={v}\n")


def _read_kv(path: Path) -> dict[str, str]:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                values[k] = v
    return values


def stage_simulate(config: PipelineConfig, out: Path) -> None:
    """Run the optical chain and persist both parties' raw time tags."""
    ss = stage_seed(config.master_seed, "simulate")
    s_em, s_herald, s_encode, s_channel, s_detect = ss.spawn(5)
    emissions = generate_emissions(config.source, config.duration_ps, s_em)
    heralds = herald_stream(emissions, config.source, s_herald)
    batch, record = encode(idler_emissions(emissions), config.table, s_encode)
    arrivals = transmit(batch, config.channel, s_channel)
    bob = detect(arrivals, config.detector, config.channel, config.duration_ps, s_detect)
    write_tags(heralds, out / HERALD_FILE)
    write_tags(bob, out / BOB_FILE)
    write_alice_record(record, out / ALICE_RECORD_FILE)


def stage_sift(config: PipelineConfig, out: Path) -> None:
    """Match Bob's tags against heralds by timestamp difference."""
    heralds = read_tags(out / HERALD_FILE)
    bob = read_tags(out / BOB_FILE)
    key = sift(heralds, bob, config.sift)
    write_sifted(key, out / SIFTED_FILE)
    stats = key.stats
    duration_s = config.duration_ps * 1e-12
    _write_kv(
        out / SIFT_STATS_FILE,
        {
            "n_heralds": len(heralds),
            "n_bob_tags": stats.n_bob_tags,
            "n_no_candidate": stats.n_no_candidate,
            "n_ambiguous_herald": stats.n_ambiguous_herald,
            "n_ambiguous_path": stats.n_ambiguous_path,
            "n_unique_match": stats.n_unique_match,
            "n_wrong_basis": stats.n_wrong_basis,
            "n_retained": stats.n_retained,
            "duration_ps": config.duration_ps,
            "sifted_rate_bps": stats.n_retained / duration_s,
        },
    )


def stage_qber(config: PipelineConfig, out: Path) -> None:
    """Sacrifice a random key sample for the error-rate estimate."""
    key = read_sifted(out / SIFTED_FILE)
    if len(key) == 0:
        raise PipelineError("qber", "no key material: the sifted key is empty")
    qber, kept = estimate_qber(key, config.sample_fraction, stage_seed(config.master_seed, "qber"))
    write_sifted(kept, out / KEPT_FILE)
    _write_kv(
        out / QBER_FILE,
        {"qber": qber, "n_sampled": len(key) - len(kept), "n_kept": len(kept)},
    )


def stage_reconcile(config: PipelineConfig, out: Path) -> None:
    """Correct Bob's blocks against Alice's syndromes and verify the result.

    Whole blocks only: bits beyond the last full block are discarded.  Blocks
    whose decode fails are dropped, but their transmitted syndromes still
    count toward leakage.
    """
    kept = read_sifted(out / KEPT_FILE)
    qber_est = float(_read_kv(out / QBER_FILE)["qber"])
    qber_dec = min(max(qber_est, _DECODER_QBER_FLOOR), _DECODER_QBER_CEIL)
    n = config.ldpc_block_bits
    n_blocks = len(kept) // n
    code = make_regular_code(n, seed=config.ldpc_seed)
    if n_blocks == 0:
        alice_ok = bob_ok = np.empty(0, dtype=np.uint8)
        n_success = 0
    else:
        alice = kept.alice_bits[: n_blocks * n].reshape(n_blocks, n)
        bob = kept.bob_bits[: n_blocks * n].reshape(n_blocks, n)
        syndromes = np.array([ldpc_syndrome(code, blk) for blk in alice])
        corrected, ok = reconcile_blocks(
            code, bob, syndromes, qber_dec, max_iter=config.ldpc_max_iterations
        )
        n_success = int(ok.sum())
        alice_ok = alice[ok].reshape(-1)
        bob_ok = corrected[ok].reshape(-1)
    verified = verify_keys(alice_ok, bob_ok, stage_seed(config.master_seed, "verify"))
    write_key_bits(bob_ok, out / RECONCILED_FILE)
    _write_kv(
        out / RECONCILE_STATS_FILE,
        {
            "block_bits": n,
            "blocks_processed": n_blocks,
            "blocks_succeeded": n_success,
            "leakage_bits": n_blocks * code.m,
            "qber_used": qber_dec,
            "verified": verified,
            "n_reconciled_bits": int(bob_ok.size),
        },
    )


def stage_amplify(config: PipelineConfig, out: Path) -> None:
    """Compress the verified key to its secure length with a Toeplitz hash.

    A failed verification yields an empty key: the protocol aborts rather
    than publish bits of unknown correctness.
    """
    bits = read_key_bits(out / RECONCILED_FILE)
    recon = _read_kv(out / RECONCILE_STATS_FILE)
    qber_est = float(_read_kv(out / QBER_FILE)["qber"])
    leakage = int(recon["leakage_bits"])
    verified = recon["verified"] == "true"
    n_in = int(bits.size)
    if verified and n_in > 0:
        frac = multiphoton_fraction_bound(config.g2_value)
        n_secure = secure_key_length(n_in, qber_est, leakage, frac, config.epsilon_sec)
    else:
        n_secure = 0
    if n_secure > 0:
        seed = ToeplitzSeed.random(n_in, n_secure, stage_seed(config.master_seed, "amplify"))
        final = toeplitz_extract(bits, seed)
    else:
        final = np.empty(0, dtype=np.uint8)
    write_key_bits(final, out / KEY_FILE)
    _write_kv(
        out / AMPLIFY_STATS_FILE,
        {"n_input_bits": n_in, "secure_bits": int(final.size)},
    )


def stage_report(config: PipelineConfig, out: Path) -> None:
    """Collect stage statistics into the final key-rate report."""
    sift_stats = _read_kv(out / SIFT_STATS_FILE)
    n_retained = int(sift_stats["n_retained"])
    if n_retained == 0:
        raise PipelineError("report", "no key material: the sifted key is empty")
    qber_stats = _read_kv(out / QBER_FILE)
    recon = _read_kv(out / RECONCILE_STATS_FILE)
    amp = _read_kv(out / AMPLIFY_STATS_FILE)
    duration_s = config.duration_ps * 1e-12
    secure_bits = int(amp["secure_bits"])
    report = KeyRateReport(
        sifted_bits=n_retained,
        sifted_rate_bps=n_retained / duration_s,
        qber=float(qber_stats["qber"]),
        ec_leakage_bits=int(recon["leakage_bits"]),
        verified=recon["verified"] == "true",
        secure_bits=secure_bits,
        secure_rate_bps=secure_bits / duration_s,
    )
    write_report(report, out / REPORT_FILE)
    write_report_csv(report, out / REPORT_CSV_FILE)


def stage_g2(config: PipelineConfig, out: Path, qtag_paths=None) -> tuple[float, float]:
    """Correlation certification: sweep g2(tau) and record the zero-delay value.

    With three tag files given (herald, arm 1, arm 2) they are analyzed as-is;
    otherwise a fresh split-arm acquisition is simulated and persisted first.
    """
    if qtag_paths is not None:
        p_s, p_i1, p_i2 = qtag_paths
        s, i1, i2 = read_tags(p_s), read_tags(p_i1), read_tags(p_i2)
    else:
        s, i1, i2 = simulate_hbt(
            config.source, config.detector, config.duration_ps, stage_seed(config.master_seed, "g2")
        )
        write_tags(s, out / HBT_HERALD_FILE)
        write_tags(i1, out / HBT_I1_FILE)
        write_tags(i2, out / HBT_I2_FILE)
    rates = compute_rates(s, i1, i2, config.g2_window_ps)
    g2, sigma = g2_zero(rates)
    points = g2_sweep(s, i1, i2, config.g2_window_ps)
    write_g2_csv(points, out / G2_FILE)
    with open(out / G2_RATES_FILE, "w") as f:
        f.write(format_rates(rates))
        f.write(f"g2_zero={g2!r}\n")
        f.write(f"sigma={sigma!r}\n")
    return g2, sigma


_KEY_STAGES = (
    ("simulate", stage_simulate),
    ("sift", stage_sift),
    ("qber", stage_qber),
    ("reconcile", stage_reconcile),
    ("amplify", stage_amplify),
    ("report", stage_report),
)


def run_pipeline(config: PipelineConfig, out_dir=None) -> KeyRateReport:
    """Execute the full key pipeline; rerunning a config is byte-identical.

    On a stage failure the output directory gains a marker file naming the
    failed stage, so partial artifacts are recognizable as such.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    for name, fn in _KEY_STAGES:
        try:
            fn(config, out)
        except PipelineError as e:
            marker.write_text(f"stage={e.stage}\nerror={e}\n")
            raise
        except Exception as e:
            marker.write_text(f"stage={name}\nerror={e}\n")
            raise PipelineError(name, str(e)) from e
    return parse_report(out / REPORT_FILE)
