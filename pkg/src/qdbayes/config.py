"""Run configuration: TOML text in, validated and fully defaulted config out."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .bayesest import GaussianPrior
from .optimizer import MAX_DOTS, OptimizerConfig
from .spinbath import MAX_BATH, Material, make_bath


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


@dataclass(frozen=True)
class MaterialSection:
    A_total_ueV: float = 83.0
    n_phys: float = 1.5e6
    g_factor: float = -0.44
    bath_spin_s: float = 0.5


@dataclass(frozen=True)
class SimSection:
    n_bath: int = 49
    alpha_mode: str = "variance_matched"
    quad_nodes: int = 64
    restarts: int | None = None  # None: 30 for up to three dots, 60 beyond
    seed: int = 0
    tol: float = 1e-9
    max_iter: int = 500


@dataclass(frozen=True)
class PriorSection:
    B0_mT: float = 7.0
    dB_mT: float = 4.0


@dataclass(frozen=True)
class SweepSection:
    t_start_ns: float = 0.1
    t_end_ns: float = 2000.0
    points: int = 200
    spacing: str = "log"


@dataclass(frozen=True)
class DetectSection:
    theta_jump: float = 5.0
    theta_kink: float = 10.0
    overlap_min: float = 0.9


@dataclass(frozen=True)
class ScanSection:
    dots_list: tuple[int, ...] = (1, 2, 3)
    priors_mT: tuple[tuple[float, float], ...] = ((0.0, 4.0), (1000.0, 4.0), (0.0, 1.0), (1000.0, 1.0))
    product_samples: int = 500


@dataclass(frozen=True)
class RunConfig:
    dots: int = 1
    material: MaterialSection = field(default_factory=MaterialSection)
    sim: SimSection = field(default_factory=SimSection)
    prior: PriorSection = field(default_factory=PriorSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    detect: DetectSection = field(default_factory=DetectSection)
    scan: ScanSection = field(default_factory=ScanSection)

    # --- derived objects ---

    def material_obj(self) -> Material:
        return Material(**dataclasses.asdict(self.material))

    def bath(self):
        return make_bath(self.material_obj(), self.sim.n_bath, self.sim.alpha_mode)

    def prior_obj(self) -> GaussianPrior:
        return GaussianPrior.from_mT(self.prior.B0_mT, self.prior.dB_mT)

    def optimizer_config(self, N: int | None = None) -> OptimizerConfig:
        N = self.dots if N is None else N
        kw = dict(tol=self.sim.tol, max_iter=self.sim.max_iter, seed=self.sim.seed,
                  quad_nodes=self.sim.quad_nodes)
        if self.sim.restarts is not None:
            kw["restarts"] = self.sim.restarts
        return OptimizerConfig.for_dots(N, **kw)

    def time_grid(self):
        from .sweeper import default_time_grid

        s = self.sweep
        return default_time_grid(s.t_start_ns, s.t_end_ns, s.points, s.spacing)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["sim"]["restarts"] is None:
            del d["sim"]["restarts"]
        d["scan"]["dots_list"] = list(d["scan"]["dots_list"])
        d["scan"]["priors_mT"] = [list(p) for p in d["scan"]["priors_mT"]]
        return d

    def resolved_dict(self) -> dict:
        """Like ``to_dict`` but with the effective restart count filled in."""
        d = self.to_dict()
        d["sim"]["restarts"] = self.optimizer_config().restarts
        return d

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical serialization."""
        body = serialize_config(self).encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


_SECTIONS = {
    "material": MaterialSection,
    "sim": SimSection,
    "prior": PriorSection,
    "sweep": SweepSection,
    "detect": DetectSection,
    "scan": ScanSection,
}


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if section is not None and current == section and key is None:
                return no
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*=", line):
            return no
    return None


def _fail(text: str, section: str | None, key: str, msg: str):
    no = _line_of(text, section, key)
    where = f"line {no}: " if no else ""
    raise ConfigError(f"{where}{msg}")


def _coerce(text, section, key, value, default, annotation):
    ann = str(annotation)
    if isinstance(value, bool):
        _fail(text, section, key, f"{key} must not be a boolean")
    if "tuple[tuple" in ann:
        try:
            return tuple((float(a), float(b)) for a, b in value)
        except (TypeError, ValueError):
            _fail(text, section, key, f"{key} must be a list of [B0_mT, dB_mT] pairs")
    if "tuple[int" in ann:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            _fail(text, section, key, f"{key} must be a list of integers")
        return tuple(value)
    if ann.startswith("int"):
        if not isinstance(value, int):
            _fail(text, section, key, f"{key} must be an integer")
        return value
    if ann == "float":
        if not isinstance(value, (int, float)):
            _fail(text, section, key, f"{key} must be a number")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            _fail(text, section, key, f"{key} must be a string")
        return value
    return value


def _validate(cfg: RunConfig, text: str) -> None:
    def need(ok, section, key, msg):
        if not ok:
            _fail(text, section, key, msg)

    need(1 <= cfg.dots <= MAX_DOTS, None, "dots", f"N out of supported range [1,{MAX_DOTS}]")
    m = cfg.material
    for k in ("A_total_ueV", "n_phys", "bath_spin_s"):
        need(getattr(m, k) > 0, "material", k, f"{k} must be positive")
    need(m.g_factor != 0, "material", "g_factor", "g_factor must be non-zero")
    need((2 * m.bath_spin_s) == int(2 * m.bath_spin_s), "material", "bath_spin_s",
         "bath_spin_s must be a half-integer")
    s = cfg.sim
    need(1 <= s.n_bath <= MAX_BATH, "sim", "n_bath", f"n_bath out of supported range [1,{MAX_BATH}]")
    need(s.alpha_mode in ("literal", "variance_matched"), "sim", "alpha_mode",
         "alpha_mode must be 'literal' or 'variance_matched'")
    need(s.quad_nodes >= 2, "sim", "quad_nodes", "quad_nodes must be at least 2")
    need(s.restarts is None or s.restarts >= 1, "sim", "restarts", "restarts must be at least 1")
    need(s.tol > 0, "sim", "tol", "tol must be positive")
    need(s.max_iter >= 1, "sim", "max_iter", "max_iter must be at least 1")
    need(0 <= s.seed < 2**64, "sim", "seed", "seed must be a non-negative 64-bit integer")
    need(cfg.prior.dB_mT > 0, "prior", "dB_mT", "dB_mT must be positive")
    w = cfg.sweep
    need(w.spacing in ("linear", "log"), "sweep", "spacing", "spacing must be 'linear' or 'log'")
    need(w.points >= 1, "sweep", "points", "points must be positive")
    need(w.t_start_ns >= 0, "sweep", "t_start_ns", "t_start_ns must be non-negative")
    need(w.spacing != "log" or w.t_start_ns > 0, "sweep", "t_start_ns",
         "t_start_ns must be positive for log spacing")
    need(w.t_end_ns > w.t_start_ns or (w.points == 1 and w.t_end_ns == w.t_start_ns), "sweep", "t_end_ns",
         "t_end_ns must exceed t_start_ns")
    d = cfg.detect
    for k in ("theta_jump", "theta_kink"):
        need(getattr(d, k) > 0, "detect", k, f"{k} must be positive")
    need(0 < d.overlap_min < 1, "detect", "overlap_min", "overlap_min must lie in (0, 1)")
    sc = cfg.scan
    need(len(sc.dots_list) > 0 and all(1 <= n <= MAX_DOTS for n in sc.dots_list), "scan", "dots_list",
         f"N out of supported range [1,{MAX_DOTS}]")
    need(len(sc.priors_mT) > 0 and all(dB > 0 for _, dB in sc.priors_mT), "scan", "priors_mT",
         "priors_mT needs at least one pair with dB_mT > 0")
    need(sc.product_samples >= 1, "scan", "product_samples", "product_samples must be positive")


def parse_config(text: str) -> RunConfig:
    """Parse TOML text; missing keys take defaults, unknown keys are rejected."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    top = {}
    for key, value in raw.items():
        if key == "dots":
            if not isinstance(value, int) or isinstance(value, bool):
                _fail(text, None, "dots", "dots must be an integer")
            top["dots"] = value
            continue
        if key not in _SECTIONS:
            _fail(text, key, None if isinstance(value, dict) else key, f"unknown key or section {key!r}")
        if not isinstance(value, dict):
            _fail(text, None, key, f"{key} must be a section")
        cls = _SECTIONS[key]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in value.items():
            if k not in fields:
                _fail(text, key, k, f"unknown key {k!r} in [{key}]")
            kw[k] = _coerce(text, key, k, v, fields[k].default, fields[k].type)
        top[key] = cls(**kw)
    cfg = RunConfig(**top)
    _validate(cfg, text)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.resolved_dict(), indent=2, sort_keys=True)
