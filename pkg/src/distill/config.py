"""Run configuration: sectioned INI files mapped onto frozen dataclasses.

Every key of every section is listed in the dataclasses below with its
default. Unknown sections or keys are rejected. ``dump_config`` writes the
fully resolved configuration, which is enough to reproduce a run.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field, fields, replace

DEFAULT_PROMPT = (
    "disc radius=0.55 color=0.85,0.35,0.2 background=0.5 std=0.05 weight=0.5; "
    "disc radius=0.4 color=0.2,0.4,0.85 background=0.5 std=0.05 weight=0.5"
)
DEFAULT_NEGATIVE = "constant color=0.5 std=0.05 weight=1"
DEFAULT_UNCONDITIONED = (
    "disc radius=0.55 color=0.85,0.35,0.2 background=0.5 std=0.05 weight=0.25; "
    "disc radius=0.4 color=0.2,0.4,0.85 background=0.5 std=0.05 weight=0.25; "
    "constant color=0.5 std=0.05 weight=0.5"
)


class ConfigError(ValueError):
    """Bad configuration file, key, or value."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    total_iters: int = 2000
    metrics_every: int = 10
    snapshot_every: int = 0
    snapshot_azimuths: tuple = (0.0, 120.0, 240.0)
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class PriorSection:
    kind: str = "analytic"
    T: int = 1000
    prompt: str = DEFAULT_PROMPT
    negative: str = DEFAULT_NEGATIVE
    unconditioned: str = DEFAULT_UNCONDITIONED
    unet_checkpoint: str = ""
    unet_base: int = 16
    unet_seed: int = 42
    unet_train_steps: int = 2000
    unet_dataset_size: int = 64
    unet_batch_size: int = 32
    unet_lr: float = 2e-3


@dataclass(frozen=True)
class GridSection:
    resolution: int = 16
    init_density: float = 0.1
    init_color: float = 0.5


@dataclass(frozen=True)
class RenderSection:
    samples_per_ray: int = 32
    res_low: int = 16
    res_high: int = 32
    res_switch: int = 1000
    background: float = 0.5
    elevation: float = 10.0
    frame: float = 1.0


@dataclass(frozen=True)
class AnnealSection:
    horizon: int = 1600
    start_min: float = 0.98
    start_max: float = 0.98
    end_min: float = 0.02
    end_max: float = 0.5


@dataclass(frozen=True)
class GuidanceSection:
    mode: str = "negative_prompt"
    schedule: str = "dynamic"
    weight: float = 50.0
    start: float = 100.0
    end: float = 10.0
    rescale: bool = True
    rescale_phi: float = 0.5
    rescale_axes: str = "channel"


@dataclass(frozen=True)
class FreeUSection:
    mode: str = "off"
    r_threshold: float = 1.0
    b1: float = 1.0
    s1: float = 1.0
    b2: float = 1.0
    s2: float = 1.0
    t_large: float = 980.0
    t_small: float = 20.0
    at_large_t: tuple = (0.6, 1.1, 0.4, 1.8)
    at_small_t: tuple = (1.4, 0.9, 1.6, 0.2)


@dataclass(frozen=True)
class OptimSection:
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class SDSSection:
    weighting: str = "sigma_squared"
    weight_scale: float = 1.0
    view_reduce: str = "sum"


@dataclass(frozen=True)
class SDSConfig:
    run: RunSection = field(default_factory=RunSection)
    prior: PriorSection = field(default_factory=PriorSection)
    grid: GridSection = field(default_factory=GridSection)
    render: RenderSection = field(default_factory=RenderSection)
    anneal: AnnealSection = field(default_factory=AnnealSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    freeu: FreeUSection = field(default_factory=FreeUSection)
    optim: OptimSection = field(default_factory=OptimSection)
    sds: SDSSection = field(default_factory=SDSSection)

    def __post_init__(self):
        validate(self)

    def with_overrides(self, overrides: dict[str, str]) -> "SDSConfig":
        """Apply ``{"section.key": "text value"}`` overrides, parsed like file values."""
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        for dotted, text in overrides.items():
            sec, _, key = dotted.partition(".")
            if sec not in sections:
                raise ConfigError(f"unknown config section {sec!r} in override {dotted!r}")
            sections[sec] = _set(sections[sec], sec, key, text)
        return SDSConfig(**sections)


_CHOICES = {
    ("prior", "kind"): ("analytic", "unet"),
    ("guidance", "mode"): ("none", "classic", "negative_prompt"),
    ("guidance", "schedule"): ("static", "dynamic"),
    ("guidance", "rescale_axes"): ("channel", "global"),
    ("freeu", "mode"): ("off", "static", "dynamic"),
    ("sds", "weighting"): ("constant", "sigma_squared"),
    ("sds", "view_reduce"): ("sum", "mean"),
}


def validate(cfg: SDSConfig) -> None:
    for (sec, key), allowed in _CHOICES.items():
        val = getattr(getattr(cfg, sec), key)
        if val not in allowed:
            raise ConfigError(f"{sec}.{key} must be one of {allowed}, got {val!r}")
    checks = [
        (cfg.run.total_iters >= 0, "run.total_iters must be >= 0"),
        (cfg.run.metrics_every >= 1, "run.metrics_every must be >= 1"),
        (cfg.run.snapshot_every >= 0, "run.snapshot_every must be >= 0"),
        (cfg.optim.learning_rate > 0, "optim.learning_rate must be > 0"),
        (cfg.optim.weight_decay >= 0, "optim.weight_decay must be >= 0"),
        (cfg.grid.resolution >= 2, "grid.resolution must be >= 2"),
        (0 < cfg.grid.init_density, "grid.init_density must be > 0"),
        (0 < cfg.grid.init_color < 1, "grid.init_color must lie in (0, 1)"),
        (cfg.render.res_low > 0 and cfg.render.res_high > 0, "render resolutions must be positive"),
        (cfg.render.samples_per_ray >= 2, "render.samples_per_ray must be >= 2"),
        (cfg.prior.T >= 2, "prior.T must be >= 2"),
        (0 <= cfg.guidance.rescale_phi <= 1, "guidance.rescale_phi must lie in [0, 1]"),
        (cfg.guidance.weight >= 0, "guidance.weight must be >= 0"),
        (cfg.freeu.r_threshold >= 0, "freeu.r_threshold must be >= 0"),
        (len(cfg.freeu.at_large_t) == 4 and len(cfg.freeu.at_small_t) == 4,
         "freeu.at_large_t / at_small_t need 4 values"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def _parse_value(tp, text: str, where: str):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is tuple:
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {tp.__name__}") from None


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ", ".join(repr(float(v)) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _set(section, sec_name: str, key: str, text: str):
    hints = typing.get_type_hints(type(section))
    if key not in hints:
        raise ConfigError(f"unknown config key {sec_name}.{key!r}")
    return replace(section, **{key: _parse_value(hints[key], text, f"{sec_name}.{key}")})


def parse_config(text: str) -> SDSConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {f.name: f.default_factory() for f in fields(SDSConfig)}
    for sec in parser.sections():
        if sec not in sections:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, val in parser.items(sec):
            sections[sec] = _set(sections[sec], sec, key, val)
    return SDSConfig(**sections)


def load_config(path) -> SDSConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: SDSConfig) -> str:
    out = io.StringIO()
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        out.write(f"[{f.name}]\n")
        for sf in fields(sec):
            out.write(f"{sf.name} = {_format_value(getattr(sec, sf.name))}\n")
        out.write("\n")
    return out.getvalue()


PAPER_SCALE = {
    "run.total_iters": "10000",
    "anneal.horizon": "8000",
    "render.res_low": "32",
    "render.res_high": "100",
    "render.res_switch": "5000",
    "optim.learning_rate": "0.01",
}


def paper_scale(cfg: SDSConfig) -> SDSConfig:
    """Iteration counts and render sizes of the full-scale protocol."""
    return cfg.with_overrides(PAPER_SCALE)


def as_dict(cfg: SDSConfig) -> dict:
    return dataclasses.asdict(cfg)
