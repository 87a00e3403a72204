"""Hanbury Brown-Twiss correlation analysis for the heralded source.

The idler arm is split 50:50 onto two detectors; windowed two-fold and
three-fold coincidence rates with the herald then give the conditional
second-order correlation g2(0) and its delay sweep g2(tau).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import DetectorParams, click_stream
from .errors import FormatError
from .source import Emissions, SourceParams, generate_emissions, herald_stream, idler_emissions
from .timetag import (
    CHANNEL_IDLER_1,
    CHANNEL_IDLER_2,
    TagStream,
    count_coincidences,
    count_triples,
)

#: Electronic delays applied to the second arm in a sweep: -10 ns .. +10 ns
#: in 500 ps steps.
DEFAULT_SWEEP_TAUS_PS = tuple(range(-10_000, 10_001, 500))


@dataclass(frozen=True)
class G2Rates:
    """Windowed coincidence rates (per second) from one HBT acquisition.

    ``r_s`` is the herald singles rate, ``r_s_i1``/``r_s_i2`` the heralded
    two-fold rates on the two split arms, and ``r_s_i1_i2`` the three-fold
    rate.  Rates are counts divided by the acquisition duration, so the raw
    counts are recoverable via :meth:`counts`.
    """

    r_s: float
    r_s_i1: float
    r_s_i2: float
    r_s_i1_i2: float
    window_ps: int
    duration_ps: int

    def __post_init__(self):
        rates = (self.r_s, self.r_s_i1, self.r_s_i2, self.r_s_i1_i2)
        if any(not math.isfinite(r) or r < 0 for r in rates):
            raise ValueError(f"rates must be finite and >= 0, got {rates}")
        if self.r_s_i1_i2 > min(self.r_s_i1, self.r_s_i2) or max(self.r_s_i1, self.r_s_i2) > self.r_s:
            raise ValueError(
                "rate ordering violated: need triple <= pairs <= herald singles, "
                f"got {rates}"
            )
        if self.window_ps <= 0:
            raise ValueError(f"window_ps must be > 0, got {self.window_ps}")
        if self.duration_ps <= 0:
            raise ValueError(f"duration_ps must be > 0, got {self.duration_ps}")

    def counts(self) -> tuple[int, int, int, int]:
        """Raw (herald, s-i1, s-i2, triple) counts behind the rates."""
        t_s = self.duration_ps * 1e-12
        return tuple(int(round(r * t_s)) for r in (self.r_s, self.r_s_i1, self.r_s_i2, self.r_s_i1_i2))


@dataclass(frozen=True)
class G2Point:
    """One sweep sample: correlation estimate at electronic delay tau."""

    tau_ps: int
    g2: float
    sigma: float

    def __post_init__(self):
        if self.g2 < 0 or self.sigma < 0:
            raise ValueError("g2 and sigma must be >= 0")


def hbt_split(emissions: Emissions, seed) -> tuple[TagStream, TagStream]:
    """Split idler arrivals 50:50 onto two arms.

    Every photon is routed independently, so a multiplicity-2 arrival lands
    on both arms half the time — the events that produce true three-fold
    coincidences with the herald.
    """
    rng = np.random.default_rng(seed)
    times = np.repeat(emissions.times_ps, emissions.n_pairs)
    to_second = rng.integers(0, 2, size=times.size).astype(bool)
    i1 = TagStream(
        times[~to_second],
        np.full(int((~to_second).sum()), CHANNEL_IDLER_1, dtype=np.uint8),
        emissions.duration_ps,
    )
    i2 = TagStream(
        times[to_second],
        np.full(int(to_second.sum()), CHANNEL_IDLER_2, dtype=np.uint8),
        emissions.duration_ps,
    )
    return i1, i2


def compute_rates(
    s: TagStream, i1: TagStream, i2: TagStream, window_ps: int, tau_ps: int = 0
) -> G2Rates:
    """Count windowed coincidences and return rates, shifting i2 by tau_ps.

    Only the second arm is delayed, mirroring an electronic delay generator
    on one beam-splitter output.
    """
    if s.duration_ps != i1.duration_ps or s.duration_ps != i2.duration_ps:
        raise ValueError("streams must share one acquisition duration")
    if s.duration_ps == 0:
        raise ValueError("cannot form rates over zero duration")
    if tau_ps != 0:
        shifted = i2.times_ps + int(tau_ps)
        keep = (shifted >= 0) & (shifted <= i2.duration_ps)
        i2 = TagStream(shifted[keep], i2.channels[keep], i2.duration_ps)
    t_s = s.duration_ps * 1e-12
    n_s = len(s)
    n_s_i1 = count_coincidences(s, i1, window_ps)
    n_s_i2 = count_coincidences(s, i2, window_ps)
    n_triple = count_triples(s, i1, i2, window_ps)
    return G2Rates(
        r_s=n_s / t_s,
        r_s_i1=n_s_i1 / t_s,
        r_s_i2=n_s_i2 / t_s,
        r_s_i1_i2=n_triple / t_s,
        window_ps=window_ps,
        duration_ps=s.duration_ps,
    )


def g2_zero(rates: G2Rates) -> tuple[float, float]:
    """Heralded correlation estimate with its standard deviation.

    g2 = r_triple * r_s / (r_s_i1 * r_s_i2).  The uncertainty treats the four
    underlying counts as independent Poisson variables, so the relative
    variances add under first-order propagation.  A zero triple count gives
    (0, 0); an empty pair rate leaves the estimate undefined.
    """
    if rates.r_s_i1 <= 0 or rates.r_s_i2 <= 0:
        raise ArithmeticError("g2 undefined: no heralded coincidences on one or both arms")
    g2 = rates.r_s_i1_i2 * rates.r_s / (rates.r_s_i1 * rates.r_s_i2)
    n_s, n_1, n_2, n_t = rates.counts()
    if n_t == 0:
        return 0.0, 0.0
    rel_var = 1 / n_t + 1 / n_s + 1 / n_1 + 1 / n_2
    return g2, g2 * math.sqrt(rel_var)


def g2_sweep(
    s: TagStream, i1: TagStream, i2: TagStream, window_ps: int, taus_ps=None
) -> list[G2Point]:
    """Evaluate g2 at each electronic delay; points are mutually independent."""
    if taus_ps is None:
        taus_ps = DEFAULT_SWEEP_TAUS_PS
    points = []
    for tau in taus_ps:
        tau = int(tau)
        g2, sigma = g2_zero(compute_rates(s, i1, i2, window_ps, tau_ps=tau))
        points.append(G2Point(tau_ps=tau, g2=g2, sigma=sigma))
    return points


def multiphoton_fraction_bound(g2_value: float, mean_photon_number: float = 1.0) -> float:
    """Upper bound on the multiphoton fraction of heralded emissions.

    Truncating the photon-number distribution at two photons gives
    P(n >= 2) / P(n >= 1) <= mu * g2 / 2; the result is clipped to [0, 1]
    and feeds the secure-key-length discount.
    """
    if g2_value < 0 or mean_photon_number < 0:
        raise ValueError("g2 and mean photon number must be >= 0")
    return min(1.0, 0.5 * g2_value * mean_photon_number)


def simulate_hbt(
    source: SourceParams, det: DetectorParams, duration_ps: int, seed
) -> tuple[TagStream, TagStream, TagStream]:
    """Run one HBT acquisition: herald stream plus two detected split arms.

    Arm timestamps are advanced by the heralding delay so that true
    coincidences sit at zero offset — the role of the delay compensation in
    the counting electronics.

    The arm taggers are modeled without dead-time blanking.  A blanking
    window longer than the swept delay would one-sidedly suppress the
    herald/arm pair rate that normalizes the sweep (the arm's own heralded
    click blanks the later accidental), biasing the shoulders — a hardware
    artifact of the tagger, not a property of the source under test.  With
    blanking disabled the normalization is unbiased for every sweep delay
    regardless of the configured dead time.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_em, s_herald, s_split, s_arm1, s_arm2 = ss.spawn(5)
    arm_det = replace(det, dead_time_ps=0)
    emissions = generate_emissions(source, duration_ps, s_em)
    heralds = herald_stream(emissions, source, s_herald)
    raw1, raw2 = hbt_split(idler_emissions(emissions), s_split)
    i1 = click_stream(
        raw1.times_ps + source.herald_delay_ps, CHANNEL_IDLER_1, arm_det, duration_ps, s_arm1
    )
    i2 = click_stream(
        raw2.times_ps + source.herald_delay_ps, CHANNEL_IDLER_2, arm_det, duration_ps, s_arm2
    )
    return heralds, i1, i2


def format_rates(rates: G2Rates) -> str:
    """key=value text block for logs and reports."""
    lines = [
        f"r_s={rates.r_s:.6g}",
        f"r_s_i1={rates.r_s_i1:.6g}",
        f"r_s_i2={rates.r_s_i2:.6g}",
        f"r_s_i1_i2={rates.r_s_i1_i2:.6g}",
        f"window_ps={rates.window_ps}",
        f"duration_ps={rates.duration_ps}",
    ]
    return "\n".join(lines) + "\n"


def write_g2_csv(points, path) -> None:
    """Write sweep points as CSV rows (tau_ps, g2, sigma)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tau_ps", "g2", "sigma"])
        for p in points:
            writer.writerow([p.tau_ps, repr(p.g2), repr(p.sigma)])


def read_g2_csv(path) -> list[G2Point]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["tau_ps", "g2", "sigma"]:
            raise FormatError(f"not a g2 sweep file: header {header!r}")
        return [G2Point(int(row[0]), float(row[1]), float(row[2])) for row in reader]
