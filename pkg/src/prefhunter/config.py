"""Pipeline configuration, read from an INI file.

Example::

    [mdp]
    gamma = 0.95
    p_esc = 0.8

    [irl]
    beta = 5.0
    prior = uniform
    bound = 5.0

    [templates]
    burst_gap_s = 30
    allowlist = 203.0.113.0/24

    [analysis]
    bandwidth = 0.2
    ile_samples = 1000

    [pipeline]
    window_start = 2018-04-06T11:00:00Z
    window_end =
    detect =
    detect_ts =
    noise_ratio = 5
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .irl import IrlConfig
from .ingest import parse_time


@dataclass
class PipelineConfig:
    gamma: float = 0.95
    p_esc: float = 0.8
    irl: IrlConfig = field(default_factory=IrlConfig)
    burst_gap_s: float = 30.0
    allowlist: tuple = ()
    bandwidth: float = 0.2
    ile_samples: int = 1000
    window_start: int | None = None
    window_end: int | None = None
    detect: tuple = ()
    detect_ts: int | None = None
    noise_ratio: float = 5.0
    seed: int = 42
    out_dir: str = "out"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.p_esc <= 1.0:
            raise ValueError("p_esc must lie in (0, 1]")
        if self.bandwidth <= 0 or self.ile_samples < 1 or self.burst_gap_s < 0 or self.noise_ratio < 0:
            raise ValueError("bandwidth, ile_samples, burst_gap_s and noise_ratio out of range")

    @property
    def window(self):
        return (self.window_start, self.window_end)

    @property
    def burst_gap_ns(self) -> int:
        return int(self.burst_gap_s * 1_000_000_000)


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def load_config(path, **overrides) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    irl_kwargs = {}
    defaults = IrlConfig()
    if cp.has_section("irl"):
        for key, value in cp.items("irl"):
            if not hasattr(defaults, key):
                raise ValueError(f"{path}: unknown [irl] key {key!r}")
            irl_kwargs[key] = _coerce(value, getattr(defaults, key))
    kw = {}
    simple = {
        "mdp": ("gamma", "p_esc"),
        "templates": ("burst_gap_s",),
        "analysis": ("bandwidth", "ile_samples"),
        "pipeline": ("noise_ratio", "seed", "out_dir"),
    }
    base = PipelineConfig()
    for section, keys in simple.items():
        if cp.has_section(section):
            for key in keys:
                if cp.has_option(section, key) and cp.get(section, key).strip():
                    kw[key] = _coerce(cp.get(section, key), getattr(base, key))
    if cp.has_option("templates", "allowlist"):
        kw["allowlist"] = tuple(x.strip() for x in cp.get("templates", "allowlist").split(",") if x.strip())
    if cp.has_section("pipeline"):
        for key in ("window_start", "window_end", "detect_ts"):
            raw = cp.get("pipeline", key, fallback="").strip()
            if raw:
                kw[key] = parse_time(raw)
        raw = cp.get("pipeline", "detect", fallback="").strip()
        if raw:
            kw["detect"] = tuple(x.strip() for x in raw.split(",") if x.strip())
    kw.update({k: v for k, v in overrides.items() if v is not None})
    kw["irl"] = dataclasses.replace(defaults, **irl_kwargs)
    return PipelineConfig(**kw)
