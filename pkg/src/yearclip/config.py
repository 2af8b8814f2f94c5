"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError

_SECTION = "train"


@dataclass(frozen=True)
class TrainConfig:
    lr_main: float = 1e-4
    lr_adapter: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    rectify: bool = False
    sched_step: int = 60
    sched_gamma: float = 0.1
    batch: int = 64
    epochs: int = 50
    tau: float = 0.07
    beta: float = 1.0
    w_ce: float = 1.0
    w_kl: float = 1.0
    w_reg: float = 1.0
    w_fcrc: float = 1.0
    sigma_kl: float = 50.0
    reg_scale: float = 100.0
    n_freq: int = 64
    rff_sigma: float = 4.0
    reg_hidden: int = 64
    activation: str = "gelu"
    freeze_location: bool = False
    seed: int = 0

    def __post_init__(self):
        positive = ("lr_main", "lr_adapter", "eps", "sched_step", "sched_gamma", "batch", "tau",
                    "sigma_kl", "reg_scale", "n_freq", "rff_sigma", "reg_hidden")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"config {name} must be positive, got {getattr(self, name)!r}")
        for name in ("w_ce", "w_kl", "w_reg", "w_fcrc", "beta", "epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"config {name} must be >= 0, got {getattr(self, name)!r}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValidationError(f"betas must lie in [0, 1), got {self.betas!r}")
        if self.activation not in ("gelu", "tanh", "identity"):
            raise ValidationError(f"unknown activation {self.activation!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in (str, "str"):
            return raw
        # betas
        parts = [float(x) for x in raw.replace("(", "").replace(")", "").split(",")]
        if len(parts) != 2:
            raise ValueError(raw)
        return tuple(parts)
    except ValueError:
        raise ValidationError(f"config key {name!r}: cannot parse {raw!r}") from None


def parse_overrides(pairs: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ValidationError(f"unknown config key {key!r}")
        typ = types[key]
        if isinstance(typ, str):
            typ = {"float": float, "int": int, "bool": bool, "str": str}.get(typ, typ)
        changes[key] = _coerce(key, typ, raw)
    return base.replace(**changes)


def loads_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    return parse_overrides(dict(parser[_SECTION]), base)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return loads_config(Path(path).read_text(encoding="utf-8"), base)
