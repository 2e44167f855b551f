"""Tool configuration: an INI file with one section per module.

Values are coerced to the type of the matching dataclass field; unknown
sections or keys are errors. Example::

    [grid]
    cell = 32
    min_pixels = 65536

    [loss]
    beta = 0.3
    lambda = 0.002
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .doc_render import RenderSpec
from .dv_loss import LossConfig
from .errors import ValidationError
from .patch_grid import GridConfig
from .toy.data import TaskConfig
from .toy.model import ToyConfig


@dataclass(frozen=True)
class AlignSettings:
    qa_per_image: int = 0
    instruction: str = "none"
    label_prefix: str = ""
    coverage_mode: str = "per_image"


@dataclass(frozen=True)
class RenderSettings:
    cols: int | None = None
    rows: int | None = None
    glyph_scale: int = 2
    fg_color: tuple | None = None
    bg_color: tuple | None = None
    margin_cells: int = 0
    polarity: str = "dark_bg"
    png: bool = False


@dataclass(frozen=True)
class DataSettings:
    train_size: int = 2000
    val_size: int = 64


@dataclass(frozen=True)
class EvalSettings:
    samples: int = 50
    min_chars: int = 200
    max_chars: int = 500
    tokens: tuple = ()


@dataclass(frozen=True)
class PathSettings:
    vocab: str | None = None
    corpus: str | None = None


@dataclass(frozen=True)
class ToolConfig:
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    align: AlignSettings = field(default_factory=AlignSettings)
    render: RenderSettings = field(default_factory=RenderSettings)
    loss: LossConfig = field(default_factory=LossConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    data: DataSettings = field(default_factory=DataSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def render_spec(self, seed: int | None = None) -> RenderSpec:
        r = self.render
        return RenderSpec(
            cell=self.grid.cell, cols=r.cols, rows=r.rows, glyph_scale=r.glyph_scale,
            fg_color=r.fg_color, bg_color=r.bg_color, margin_cells=r.margin_cells,
            seed=self.seed if seed is None else seed, polarity=r.polarity,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# config key -> dataclass field name, where they differ
_RENAMES = {("loss", "lambda"): "lam"}


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, str):
            return raw
        if key == "mix":
            pairs = []
            for part in raw.split(","):
                name, _, w = part.strip().partition(":")
                pairs.append((name.strip(), float(w or 1.0)))
            return tuple(pairs)
        if key == "words":
            return tuple(raw.split())
        if raw.lower() in ("", "none", "auto"):
            return None
        if key in ("fg_color", "bg_color", "tokens"):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if key in ("cols", "rows"):
            return int(raw)
        return raw
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None


def _build(cls, section: str, items: dict):
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        name = _RENAMES.get((section, key), key)
        if name not in names:
            raise ValidationError(f"unknown config key [{section}] {key}")
        kwargs[name] = _parse_value(raw, getattr(defaults, name), key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"[{section}]: {e}") from None


def load_config(path=None) -> ToolConfig:
    """Read a config file; ``None`` gives all defaults."""
    if path is None:
        return ToolConfig()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as e:
        raise ValidationError(f"{path}: {e}") from None
    sections = {f.name: f for f in dataclasses.fields(ToolConfig) if f.name != "seed"}
    kwargs = {}
    for sec in cp.sections():
        if sec == "run":
            for key, raw in cp[sec].items():
                if key != "seed":
                    raise ValidationError(f"unknown config key [run] {key}")
                kwargs["seed"] = _parse_value(raw, 0, key)
            continue
        if sec not in sections:
            raise ValidationError(f"unknown config section [{sec}]")
        if sec == "toy" and "seed" in cp[sec]:
            raise ValidationError("[toy] seed is not configurable; set [run] seed")
        cls = type(getattr(ToolConfig(), sec))
        kwargs[sec] = _build(cls, sec, dict(cp[sec]))
    cfg = ToolConfig(**kwargs)
    if cfg.toy.cell != cfg.task.cell:
        raise ValidationError(f"[toy] cell={cfg.toy.cell} must equal [task] cell={cfg.task.cell}")
    return cfg


def require_path(value: str | None, key: str) -> Path:
    """Resolve a path-valued setting, naming ``key`` when it is missing."""
    if not value:
        raise ValidationError(f"missing required path: {key}")
    p = Path(value)
    if not p.exists():
        raise ValidationError(f"{key}: path does not exist: {p}")
    return p
