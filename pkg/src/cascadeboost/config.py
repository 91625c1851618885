"""Experiment configuration: flat sectioned ``key=value`` text.

Example::

    [experiment]
    mode = cascade
    seed = 3
    n_mc = 4

    [data]
    synthetic = gaussian_mixture
    n = 1000
    param.K = 4

    [train]
    epochs = 20
    optimizer = adam

    [stage.1] family=vae latent_dim=2 hidden=64,64
    [stage.2] family=gmm n_components=10 init=cover

Keys may follow the section header on the same line. ``#`` starts a
comment. Multiplicative and hybrid runs use ``[component.i]`` sections
(``alpha``, ``beta`` and either a ``family`` or nested
``[component.i.stage.j]`` sections forming a cascade). Semi-supervised
runs read ``[semisup]`` (alpha, beta, labels_per_class, lower_on_unlabeled).
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import BadParams, ConfigError
from .metamodels.config import TrainConfig
from .metamodels.specs import SPEC_TYPES, ModelSpec
from .semisup import SemiSupConfig

MODES = ("cascade", "semisup", "multiplicative", "hybrid")

_SECTION = re.compile(r"^\[([A-Za-z0-9_.]+)\]\s*(.*)$")
_STAGE = re.compile(r"^stage\.(\d+)$")
_COMPONENT = re.compile(r"^component\.(\d+)$")
_COMPONENT_STAGE = re.compile(r"^component\.(\d+)\.stage\.(\d+)$")
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_sections(text: str) -> dict[str, dict[str, str]]:
    """Section name -> ordered key/value strings. Duplicate sections or keys
    are errors, so a config cannot silently override itself."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = {}
            rest = m.group(2)
        else:
            if current is None:
                raise ConfigError(f"line {lineno}: key outside of any section")
            rest = line
        for key, value in _pairs(rest, lineno):
            if key in sections[current]:
                raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
            sections[current][key] = value
    return sections


def _pairs(text: str, lineno: int):
    # "a = 1" on its own line, or "a=1 b=2" after a header
    text = re.sub(r"\s*=\s*", "=", text.strip())
    if not text:
        return []
    try:
        tokens = shlex.split(text)
    except ValueError as e:
        raise ConfigError(f"line {lineno}: {e}") from None
    out = []
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        out.append((k.lower(), v))
    return out


def _to_bool(value: str, what: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{what}: expected a boolean, got {value!r}")


def _convert(value: str, kind, what: str):
    try:
        if kind is bool:
            return _to_bool(value, what)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{what}: cannot read {value!r} as {kind.__name__}") from None


def train_config(values: dict[str, str], base: TrainConfig, where: str) -> TrainConfig:
    kw = {}
    for key, raw in values.items():
        if key in _TRAIN_KEYS:
            kw[key] = _convert(raw, type(getattr(base, key)), f"[{where}] {key}")
    try:
        return base.with_(**kw)
    except ValueError as e:
        raise ConfigError(f"[{where}] {e}") from None


_SPEC_KEYS = {
    "gmm": {"n_components": int, "init": str},
    "rbm": {"n_hidden": int, "init": str},
    "vae": {"latent_dim": int, "hidden": "ints", "decoder_var": float},
    "classmix": {"n_classes": int, "per_class": int},
}


def model_spec(values: dict[str, str], base: TrainConfig, where: str) -> ModelSpec:
    family = values.get("family", "").lower()
    if family not in SPEC_TYPES:
        raise ConfigError(f"[{where}] family must be one of {sorted(SPEC_TYPES)}, got {family!r}")
    allowed = _SPEC_KEYS[family]
    kw = {}
    for key, raw in values.items():
        if key == "family" or key in _TRAIN_KEYS:
            continue
        if key not in allowed:
            raise ConfigError(f"[{where}] unknown key {key!r} for family {family}")
        if allowed[key] == "ints":
            try:
                kw[key] = tuple(int(v) for v in raw.split(",") if v.strip())
            except ValueError:
                raise ConfigError(f"[{where}] {key}: expected comma-separated integers") from None
        else:
            kw[key] = _convert(raw, allowed[key], f"[{where}] {key}")
    cfg = train_config(values, base, where) if _TRAIN_KEYS & values.keys() else None
    try:
        return SPEC_TYPES[family](**kw, cfg=cfg)
    except BadParams as e:
        raise ConfigError(f"[{where}] {e}") from None


@dataclass(frozen=True)
class ComponentConfig:
    """One member of a multiplicative ensemble: a single spec or a cascade."""

    specs: tuple[ModelSpec, ...]
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def is_cascade(self) -> bool:
        return len(self.specs) > 1


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    synthetic: str | None = None
    n: int = 1000
    seed: int | None = None
    params: dict = field(default_factory=dict)
    test_path: str | None = None
    test_n: int = 0
    image_width: int | None = None
    image_height: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    data: DataConfig
    train: TrainConfig = TrainConfig()
    recipe: tuple[ModelSpec, ...] = ()
    components: tuple[ComponentConfig, ...] = ()
    semisup: SemiSupConfig = SemiSupConfig()
    labels_per_class: int = 10
    seed: int = 0
    n_mc: int = 1
    iw_samples: int = 16
    n_partition: int = 10000
    n_samples: int = 1000
    burn_in: int = 1000
    thinning: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("cascade", "semisup") and not self.recipe:
            raise ConfigError(f"mode {self.mode} needs [stage.i] sections")
        if self.mode in ("multiplicative", "hybrid") and not self.components:
            raise ConfigError(f"mode {self.mode} needs [component.i] sections")
        if self.data.path is None and self.data.synthetic is None:
            raise ConfigError("[data] needs path or synthetic")
        for name in ("n_mc", "iw_samples", "n_samples", "thinning"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_partition < 0 or self.burn_in < 0:
            raise ConfigError("n_partition and burn_in must be >= 0")


def _ordered(matches: dict[int, dict], what: str) -> list[dict]:
    keys = sorted(matches)
    if keys != list(range(1, len(keys) + 1)):
        raise ConfigError(f"{what} sections must be numbered 1..n without gaps, got {keys}")
    return [matches[k] for k in keys]


_EXPERIMENT_KEYS = {"mode": str, "seed": int, "n_mc": int, "iw_samples": int, "n_partition": int,
                    "n_samples": int, "burn_in": int, "thinning": int, "out": str}
_DATA_KEYS = {"path": str, "synthetic": str, "n": int, "seed": int, "test_path": str, "test_n": int, "image_width": int,
              "image_height": int}


def experiment_from_sections(sections: dict[str, dict[str, str]]) -> ExperimentConfig:
    known = {"experiment", "data", "train", "semisup"}
    stages, comps, comp_stages = {}, {}, {}
    for name, values in sections.items():
        if m := _STAGE.match(name):
            stages[int(m.group(1))] = values
        elif m := _COMPONENT.match(name):
            comps[int(m.group(1))] = values
        elif m := _COMPONENT_STAGE.match(name):
            comp_stages.setdefault(int(m.group(1)), {})[int(m.group(2))] = values
        elif name not in known:
            raise ConfigError(f"unknown section [{name}]")

    exp = {}
    for key, raw in sections.get("experiment", {}).items():
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"[experiment] unknown key {key!r}")
        exp[key] = _convert(raw, _EXPERIMENT_KEYS[key], f"[experiment] {key}")
    if "mode" not in exp:
        raise ConfigError("[experiment] mode is required")
    exp["mode"] = exp["mode"].lower()

    data_kw, params = {}, {}
    for key, raw in sections.get("data", {}).items():
        if key.startswith("param."):
            params[key[len("param."):]] = raw
        elif key in _DATA_KEYS:
            data_kw[key] = _convert(raw, _DATA_KEYS[key], f"[data] {key}")
        else:
            raise ConfigError(f"[data] unknown key {key!r}")
    data = DataConfig(params=params, **data_kw)

    train_values = sections.get("train", {})
    bad = set(train_values) - _TRAIN_KEYS
    if bad:
        raise ConfigError(f"[train] unknown keys {sorted(bad)}")
    train = train_config(train_values, TrainConfig(), "train")

    recipe = tuple(model_spec(v, train, f"stage.{i + 1}") for i, v in enumerate(_ordered(stages, "stage")))

    components = []
    for i, values in enumerate(_ordered(comps, "component") if comps else [], start=1):
        own = comp_stages.pop(i, {})
        where = f"component.{i}"
        alpha = _convert(values.get("alpha", "1"), float, f"[{where}] alpha")
        beta = _convert(values.get("beta", "1"), float, f"[{where}] beta")
        rest = {k: v for k, v in values.items() if k not in ("alpha", "beta")}
        if own and rest:
            raise ConfigError(f"[{where}] has stage sections, so it cannot also set model keys")
        if own:
            specs = tuple(model_spec(v, train, f"{where}.stage.{j + 1}")
                          for j, v in enumerate(_ordered(own, f"{where}.stage")))
        else:
            specs = (model_spec(rest, train, where),)
        if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
            raise ConfigError(f"[{where}] alpha and beta must lie in [0, 1]")
        components.append(ComponentConfig(specs, alpha, beta))
    if comp_stages:
        raise ConfigError(f"stage sections for undeclared components {sorted(comp_stages)}")

    semi_values = dict(sections.get("semisup", {}))
    labels_per_class = _convert(semi_values.pop("labels_per_class", "10"), int, "[semisup] labels_per_class")
    semi_kw = {}
    for key, raw in semi_values.items():
        if key in ("alpha", "beta"):
            semi_kw[key] = _convert(raw, float, f"[semisup] {key}")
        elif key == "lower_on_unlabeled":
            semi_kw[key] = _to_bool(raw, "[semisup] lower_on_unlabeled")
        else:
            raise ConfigError(f"[semisup] unknown key {key!r}")

    return ExperimentConfig(data=data, train=train, recipe=recipe, components=tuple(components),
                            semisup=SemiSupConfig(**semi_kw), labels_per_class=labels_per_class, **exp)


def parse_config(text: str) -> ExperimentConfig:
    return experiment_from_sections(parse_sections(text))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def _spec_lines(spec: ModelSpec) -> list[str]:
    parts = [f"family={spec.family}"]
    for f in fields(spec):
        if f.name == "cfg":
            continue
        v = getattr(spec, f.name)
        parts.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
    if spec.cfg is not None:
        parts += [f"{f.name}={getattr(spec.cfg, f.name)}" for f in fields(TrainConfig)]
    return parts


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(format_config(c)) == c``."""
    lines = ["[experiment]", f"mode = {cfg.mode}"]
    for key in _EXPERIMENT_KEYS:
        if key != "mode" and getattr(cfg, key) is not None:
            lines.append(f"{key} = {getattr(cfg, key)}")
    lines += ["", "[data]"]
    for key in _DATA_KEYS:
        if getattr(cfg.data, key) is not None:
            lines.append(f"{key} = {getattr(cfg.data, key)}")
    lines += [f"param.{k} = {v}" for k, v in cfg.data.params.items()]
    lines += ["", "[train]"] + [f"{f.name} = {getattr(cfg.train, f.name)}" for f in fields(TrainConfig)]
    lines += ["", "[semisup]", f"labels_per_class = {cfg.labels_per_class}",
              f"lower_on_unlabeled = {cfg.semisup.lower_on_unlabeled}"]
    for key in ("alpha", "beta"):
        if getattr(cfg.semisup, key) is not None:
            lines.append(f"{key} = {getattr(cfg.semisup, key)!r}")
    for i, spec in enumerate(cfg.recipe, start=1):
        lines += ["", f"[stage.{i}] " + " ".join(_spec_lines(spec))]
    for i, comp in enumerate(cfg.components, start=1):
        lines += ["", f"[component.{i}] alpha={comp.alpha!r} beta={comp.beta!r}"]
        if comp.is_cascade:
            for j, spec in enumerate(comp.specs, start=1):
                lines.append(f"[component.{i}.stage.{j}] " + " ".join(_spec_lines(spec)))
        else:
            lines[-1] += " " + " ".join(_spec_lines(comp.specs[0]))
    return "\n".join(lines) + "\n"


__all__ = ["ComponentConfig", "DataConfig", "ExperimentConfig", "MODES",
           "format_config", "load_config", "parse_config", "parse_sections"]
