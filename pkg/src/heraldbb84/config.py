"""Pipeline configuration: one plain-text file covering every stage.

The format is INI-style sections of key=value pairs.  Any key may be omitted
(its default applies); unknown keys are rejected so typos cannot silently
fall back to defaults.  serialize/parse round-trip exactly, including float
values, which are written with full repr precision.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .channel import ChannelParams, DetectorParams
from .errors import ConfigError
from .sifting import SiftConfig
from .source import SourceParams
from .transmitter import PATHS, PathDelayTable, PolarizationState

__all__ = [
    "PipelineConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "save_config",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one end-to-end run needs, cross-checked at construction.

    The sifting section carries its own copies of the channel delay and the
    herald delay; they must agree with the channel/source sections, since a
    mismatch would silently shift every expected timestamp offset.
    """

    source: SourceParams = field(default_factory=SourceParams)
    table: PathDelayTable = field(default_factory=PathDelayTable)
    channel: ChannelParams = field(default_factory=ChannelParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    sift: SiftConfig = field(default_factory=SiftConfig)
    duration_ps: int = 10**12
    master_seed: int = 1
    out_dir: str = "out"
    sample_fraction: float = 0.1
    epsilon_sec: float = 1e-10
    g2_value: float = 0.0408
    g2_window_ps: int = 1_500
    ldpc_block_bits: int = 4_096
    ldpc_seed: int = 0x5EED
    ldpc_max_iterations: int = 60

    def __post_init__(self):
        if self.sift.table != self.table:
            raise ConfigError("sifting delay table differs from the encoder table")
        if self.sift.herald_delay_ps != self.source.herald_delay_ps:
            raise ConfigError(
                f"herald delay mismatch: source says {self.source.herald_delay_ps} ps, "
                f"sifting says {self.sift.herald_delay_ps} ps"
            )
        if self.sift.delta_ch_ps != self.channel.delta_ch_ps:
            raise ConfigError(
                f"channel delay mismatch: channel says {self.channel.delta_ch_ps} ps, "
                f"sifting says {self.sift.delta_ch_ps} ps"
            )
        if self.duration_ps <= 0:
            raise ConfigError(f"duration_ps must be > 0, got {self.duration_ps}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError(f"sample_fraction must be in (0, 1], got {self.sample_fraction}")
        if not 0.0 < self.epsilon_sec < 1.0:
            raise ConfigError(f"epsilon_sec must be in (0, 1), got {self.epsilon_sec}")
        if self.g2_value < 0:
            raise ConfigError(f"g2_value must be >= 0, got {self.g2_value}")
        if self.g2_window_ps <= 0:
            raise ConfigError(f"g2_window_ps must be > 0, got {self.g2_window_ps}")
        if self.ldpc_block_bits <= 0 or self.ldpc_max_iterations <= 0:
            raise ConfigError("block size and iteration budget must be > 0")
        if not self.out_dir:
            raise ConfigError("out_dir must be non-empty")


def _duration_s(duration_ps: int) -> float:
    return duration_ps / 1e12


def _duration_ps(duration_s: float) -> int:
    return int(round(duration_s * 1e12))


# Section name -> {key: converter}.  Converters turn the raw string into the
# value handed to the dataclass; serialization is the mirror image below.
_INT = int
_FLOAT = float
_STR = str


def _parse_coupling(raw: str) -> tuple:
    parts = raw.replace(",", " ").split()
    if len(parts) != 4:
        raise ConfigError(f"state_coupling needs four values, got {raw!r}")
    return tuple(float(p) for p in parts)


_SECTIONS = {
    "pipeline": {
        "duration_s": _FLOAT,
        "master_seed": _INT,
        "out_dir": _STR,
    },
    "source": {
        "pair_rate_hz": _FLOAT,
        "herald_delay_ps": _INT,
        "herald_efficiency": _FLOAT,
        "multi_pair_window_ps": _INT,
        "multi_pair_prob": _FLOAT,
    },
    "delays": {p: _STR for p in PATHS},
    "channel": {
        "transmittance": _FLOAT,
        "coupling_efficiency": _FLOAT,
        "delta_ch_ps": _INT,
        "misalignment_prob": _FLOAT,
        "state_coupling": _parse_coupling,
    },
    "detector": {
        "efficiency": _FLOAT,
        "dark_rate_hz": _FLOAT,
        "jitter_sigma_ps": _FLOAT,
        "tdc_resolution_ps": _INT,
        "dead_time_ps": _INT,
    },
    "sift": {
        "window_ps": _INT,
        "delta_ch_ps": _INT,
        "herald_delay_ps": _INT,
    },
    "reconcile": {
        "block_bits": _INT,
        "code_seed": _INT,
        "max_iterations": _INT,
    },
    "postproc": {
        "sample_fraction": _FLOAT,
        "epsilon_sec": _FLOAT,
        "g2_value": _FLOAT,
        "g2_window_ps": _INT,
    },
}


def _read_sections(text: str) -> dict[str, dict]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    out: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        out[section] = {}
        for key, raw in cp[section].items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                out[section][key] = allowed[key](raw)
            except ValueError as e:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from e
    return out


def _parse_delay_entry(path: str, raw: str):
    parts = raw.split()
    if len(parts) != 2 or parts[1] not in PolarizationState.__members__:
        raise ConfigError(f"delay entry for {path!r} must be '<delay_ps> <H|V|D|A>', got {raw!r}")
    return int(parts[0]), PolarizationState[parts[1]]


def parse_config(text: str) -> PipelineConfig:
    """Build a validated PipelineConfig from config text.

    Empty text yields the all-defaults configuration.
    """
    sec = _read_sections(text)

    def pick(section: str) -> dict:
        return dict(sec.get(section, {}))

    source = SourceParams(**pick("source"))
    if "delays" in sec and sec["delays"]:
        missing = [p for p in PATHS if p not in sec["delays"]]
        if missing:
            raise ConfigError(f"[delays] must list all four paths, missing {missing}")
        table = PathDelayTable({p: _parse_delay_entry(p, sec["delays"][p]) for p in PATHS})
    else:
        table = PathDelayTable()
    channel = ChannelParams(**pick("channel"))
    detector = DetectorParams(**pick("detector"))

    sift_vals = dict(sec.get("sift", {}))
    sift_vals.setdefault("delta_ch_ps", channel.delta_ch_ps)
    sift_vals.setdefault("herald_delay_ps", source.herald_delay_ps)
    sift = SiftConfig(table=table, **sift_vals)

    pipe = sec.get("pipeline", {})
    recon = sec.get("reconcile", {})
    post = sec.get("postproc", {})
    kwargs = {}
    if "duration_s" in pipe:
        kwargs["duration_ps"] = _duration_ps(pipe["duration_s"])
    if "master_seed" in pipe:
        kwargs["master_seed"] = pipe["master_seed"]
    if "out_dir" in pipe:
        kwargs["out_dir"] = pipe["out_dir"]
    if "block_bits" in recon:
        kwargs["ldpc_block_bits"] = recon["block_bits"]
    if "code_seed" in recon:
        kwargs["ldpc_seed"] = recon["code_seed"]
    if "max_iterations" in recon:
        kwargs["ldpc_max_iterations"] = recon["max_iterations"]
    for key in ("sample_fraction", "epsilon_sec", "g2_value", "g2_window_ps"):
        if key in post:
            kwargs[key] = post[key]
    return PipelineConfig(
        source=source, table=table, channel=channel, detector=detector, sift=sift, **kwargs
    )


def serialize_config(config: PipelineConfig) -> str:
    """Render a config as text such that parse_config inverts it exactly."""
    lines = []

    def section(name: str, pairs):
        lines.append(f"[{name}]")
        for k, v in pairs:
            lines.append(f"{k} = {v}")
        lines.append("")

    section(
        "pipeline",
        [
            ("duration_s", repr(_duration_s(config.duration_ps))),
            ("master_seed", config.master_seed),
            ("out_dir", config.out_dir),
        ],
    )
    src = config.source
    section(
        "source",
        [
            ("pair_rate_hz", repr(src.pair_rate_hz)),
            ("herald_delay_ps", src.herald_delay_ps),
            ("herald_efficiency", repr(src.herald_efficiency)),
            ("multi_pair_window_ps", src.multi_pair_window_ps),
            ("multi_pair_prob", repr(src.multi_pair_prob)),
        ],
    )
    section(
        "delays",
        [(p, f"{config.table.delay_ps(p)} {config.table.state_for(p).name}") for p in PATHS],
    )
    ch = config.channel
    section(
        "channel",
        [
            ("transmittance", repr(ch.transmittance)),
            ("coupling_efficiency", repr(ch.coupling_efficiency)),
            ("delta_ch_ps", ch.delta_ch_ps),
            ("misalignment_prob", repr(ch.misalignment_prob)),
            ("state_coupling", " ".join(repr(float(c)) for c in ch.state_coupling)),
        ],
    )
    det = config.detector
    section(
        "detector",
        [
            ("efficiency", repr(det.efficiency)),
            ("dark_rate_hz", repr(det.dark_rate_hz)),
            ("jitter_sigma_ps", repr(det.jitter_sigma_ps)),
            ("tdc_resolution_ps", det.tdc_resolution_ps),
            ("dead_time_ps", det.dead_time_ps),
        ],
    )
    section(
        "sift",
        [
            ("window_ps", config.sift.window_ps),
            ("delta_ch_ps", config.sift.delta_ch_ps),
            ("herald_delay_ps", config.sift.herald_delay_ps),
        ],
    )
    section(
        "reconcile",
        [
            ("block_bits", config.ldpc_block_bits),
            ("code_seed", config.ldpc_seed),
            ("max_iterations", config.ldpc_max_iterations),
        ],
    )
    section(
        "postproc",
        [
            ("sample_fraction", repr(config.sample_fraction)),
            ("epsilon_sec", repr(config.epsilon_sec)),
            ("g2_value", repr(config.g2_value)),
            ("g2_window_ps", config.g2_window_ps),
        ],
    )
    return "\n".join(lines)


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        return parse_config(f.read())


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as f:
        f.write(serialize_config(config))
