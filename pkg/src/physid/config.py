"""Experiment configuration: YAML sections mapped onto frozen dataclasses.

Top-level sections are ``mode``, ``seed``, ``chain``, ``sensors``,
``input_spec``, ``sampling``, ``ssi``, ``recovery``, ``bandpass``,
``blind``, ``demo`` and ``monte_carlo``. Unknown keys are rejected so that
typos surface as errors instead of silently falling back to defaults.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .mechanics import ChainSpec, SensorConfig

MODES = ("pssid", "blind", "input-estimation-demo")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ChainConfig:
    """Chain parameters; explicit lists win over the uniform ``n``/``mass``/``stiffness``."""

    n: int = 3
    mass: float = 1.0
    stiffness: float = 100.0
    masses: tuple | None = None
    stiffnesses: tuple | None = None
    rayleigh: tuple | None = (0.1, 0.001)
    dampings: tuple | None = None
    include_last_anchor: bool = True

    def to_spec(self, n=None):
        """:class:`ChainSpec` for this chain; ``n`` forces a uniform chain of that size."""
        anchor = int(self.include_last_anchor)
        if n is not None or self.masses is None:
            n = n or self.n
            return ChainSpec((self.mass,) * n, (self.stiffness,) * (n + anchor),
                             None, self.rayleigh, self.include_last_anchor)
        masses = tuple(self.masses)
        ks = (tuple(self.stiffnesses) if self.stiffnesses is not None
              else (self.stiffness,) * (len(masses) + anchor))
        if self.dampings is not None:
            return ChainSpec(masses, ks, tuple(self.dampings), None, self.include_last_anchor)
        return ChainSpec(masses, ks, None, self.rayleigh, self.include_last_anchor)


@dataclass(frozen=True)
class SensorSection:
    """``kind`` is ``acceleration`` (``C_ac = I``) or ``custom`` with explicit matrices."""

    kind: str = "acceleration"
    snr_db: float | None = None
    C_p: list | None = None
    C_v: list | None = None
    C_ac: list | None = None

    def build(self, n, snr_db="keep"):
        snr = self.snr_db if snr_db == "keep" else snr_db
        if self.kind == "acceleration":
            return SensorConfig.acceleration(n, snr)
        if self.kind != "custom":
            raise ConfigError(f"sensors.kind must be 'acceleration' or 'custom', got {self.kind!r}")
        mats = []
        for name in ("C_p", "C_v", "C_ac"):
            val = getattr(self, name)
            mats.append(np.zeros((n, n)) if val is None else np.atleast_2d(np.asarray(val, float)))
        m = {a.shape[0] for a in mats}
        if len(m) != 1 or any(a.shape[1] != n for a in mats):
            raise ConfigError(f"sensor matrices must all be m x {n}")
        return SensorConfig(*mats, snr)


@dataclass(frozen=True)
class InputSpec:
    """Excitation used to generate data.

    ``multisine``: offset plus sines at ``harmonics * f_T`` (periodic,
    sampled exactly). ``tones``: sines at arbitrary ``freqs``; ``jitter``
    shifts each tone by a seeded random fraction of the record's harmonic
    spacing, so the excitation is not periodic over the record.
    ``noise``: band-pass filtered white noise. ``unknown``: external data.
    """

    kind: str = "multisine"
    f_T: float = 0.5
    harmonics: tuple = (1, 2, 3)
    amplitudes: tuple = (1.0, 1.0, 1.0)
    phases: tuple = (0.3, 1.1, 2.0)
    offset: float | None = 1.0
    freqs: tuple = ()
    jitter: float = 0.0
    band: tuple = (0.5, 3.5)
    filter_order: int = 4
    rms: float = 1.0


@dataclass(frozen=True)
class Sampling:
    T_s: float = 0.005
    N: int = 50000


@dataclass(frozen=True)
class SsiSettings:
    """Subspace settings.

    ``i`` is the number of block rows per half (``None``: the minimum
    ``ceil(1.5 order / m) + 2``); ``lag_step`` spaces block rows that many
    samples apart, widening the time window without more rows. The
    defaults span 2.5 s at the default sampling, enough to separate the
    slowest input tone from the first mode.
    ``order_hint`` is ``"auto"`` or an explicit augmented order.
    """

    i: int | None = 50
    j: int | None = None
    lag_step: int = 10
    weights: str = "unit"
    order_hint: int | str = "auto"
    rank_tol: float = 1e-10
    noise_floor: float = 1e-8
    riccati: str = "auto"
    remove_mean: bool = False


@dataclass(frozen=True)
class RecoverySettings:
    """``tol_hz=None`` picks two record bins (pssid) or half a bin (blind)."""

    tol_hz: float | None = None
    metric: str | None = None
    stability_enforce: bool = False
    burn_in: int | None = None
    dc_completion: bool = True


@dataclass(frozen=True)
class Bandpass:
    lo_hz: float | None = None
    hi_hz: float | None = None
    order: int = 4

    @property
    def enabled(self):
        return self.lo_hz is not None and self.hi_hz is not None


@dataclass(frozen=True)
class BlindSettings:
    """Harmonic detection for blind mode and the augmented-order warning cap."""

    harmonic_fraction: float = 1e-4
    detect_band: tuple | None = None
    max_harmonic: int | None = None
    order_cap: int = 60


@dataclass(frozen=True)
class DemoSettings:
    """Input-estimation demo on the fixed two-state discrete plant."""

    noise_cov: float = 1e-4
    N: int = 60000
    N1: int = 10000
    f_s: float = 10000.0
    cutoff_hz: float = 20.0
    segment_start: int = 20000
    harmonic_fraction: float = 1e-4
    signal_process_noise: float = 1e-6


@dataclass(frozen=True)
class MonteCarlo:
    runs: int = 1
    seeds: tuple | None = None
    snr_list: tuple = ()
    dof_list: tuple = ()

    def seed_list(self, base):
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [int(base) + k for k in range(self.runs)]


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "pssid"
    seed: int = 0
    chain: ChainConfig = field(default_factory=ChainConfig)
    sensors: SensorSection = field(default_factory=SensorSection)
    input_spec: InputSpec = field(default_factory=InputSpec)
    sampling: Sampling = field(default_factory=Sampling)
    ssi: SsiSettings = field(default_factory=SsiSettings)
    recovery: RecoverySettings = field(default_factory=RecoverySettings)
    bandpass: Bandpass = field(default_factory=Bandpass)
    blind: BlindSettings = field(default_factory=BlindSettings)
    demo: DemoSettings = field(default_factory=DemoSettings)
    monte_carlo: MonteCarlo = field(default_factory=MonteCarlo)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "pssid" and self.input_spec.kind == "unknown":
            raise ConfigError("pssid mode needs a known input_spec")

    def with_updates(self, **sections):
        return replace(self, **sections)

    def to_dict(self):
        return _plain(asdict(self))

    def hash(self):
        """SHA-256 of the canonical JSON form (first 16 hex digits)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = {
    "chain": ChainConfig, "sensors": SensorSection, "input_spec": InputSpec,
    "sampling": Sampling, "ssi": SsiSettings, "recovery": RecoverySettings,
    "bandpass": Bandpass, "blind": BlindSettings, "demo": DemoSettings,
    "monte_carlo": MonteCarlo,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) and k not in ("C_p", "C_v", "C_ac") else v
            for k, v in data.items()}
    return cls(**vals)


def config_from_dict(data):
    """Build an :class:`ExperimentConfig` from a parsed mapping."""
    data = dict(data or {})
    unknown = sorted(set(data) - set(_SECTIONS) - {"mode", "seed"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    kwargs = {name: _section(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(mode=data.get("mode", "pssid"), seed=int(data.get("seed", 0)), **kwargs)


def load_config(path):
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)
