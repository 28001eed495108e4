"""Run configuration: a TOML file with a versioned schema and no unknown keys.

Example::

    schema = 1
    seed = 7
    task = "deblur"
    trials = 2

    [scene]
    image_size = 32
    kernel = "motion,5"

    [em]
    guidance_scale = 1e-4

    [em.skip]
    S_T = 500
    K = 8

Relative paths are resolved against the directory holding the config file
and must exist when the file is loaded.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .em import EMConfig, SkipSchedule
from .estep import AnnealSchedule
from .mstep import HQSConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic ground truth: the latent model plus kernel and view settings."""

    image_size: int = 32
    latent_dim: int = 64
    components: int = 3
    spread: float = 1.0
    comp_var: float = 0.25
    offset: float = 0.5
    codec: str = "random"
    kernel: str = "motion,5"
    sigma: float = 0.01
    theta_deg: float = 20.0
    count: int = 1


@dataclass(frozen=True)
class InputSpec:
    """Optional files that replace synthesized data."""

    observation: Path | None = None
    kernel: Path | None = None
    ground_truth: Path | None = None
    view1: Path | None = None
    view2: Path | None = None


@dataclass(frozen=True)
class BenchSpec:
    K: tuple = (1, 8, 16)
    seeds: int = 5
    S_T: int = 500


@dataclass
class RunConfig:
    seed: int
    em: EMConfig
    task: str = "deblur"
    trials: int = 1
    jobs: int = 1
    out: Path = Path("out")
    trace: bool = False
    scene: SceneSpec = field(default_factory=SceneSpec)
    inputs: InputSpec = field(default_factory=InputSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    source: Path | None = None

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(self, seed=seed, em=dataclasses.replace(self.em, seed=seed))


_EM_NESTED = {"anneal", "skip", "hqs"}
# the observation noise lives in [scene]; the trace switch is top level
_EM_EXCLUDED = {"seed", "task", "sigma", "trace"} | _EM_NESTED


def _names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, table: dict, where: str, skip: set[str] = frozenset()):
    allowed = _names(cls) - set(skip)
    _check_keys(table, allowed, where)
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _skip_schedule(table: dict) -> SkipSchedule | None:
    table = dict(table)
    _check_keys(table, {"enabled", "S_T", "K"}, "[em.skip]")
    if not table.pop("enabled", True):
        return None
    return _build(SkipSchedule, table, "[em.skip]")


def _resolve(base: Path, value, key: str) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"[input] {key} must be a path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"[input] {key}: file not found: {p}")
    return p


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    data = dict(data)
    if "schema" not in data:
        raise ConfigError("missing 'schema' key")
    if data.pop("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version; expected {SCHEMA_VERSION}")
    if "seed" not in data:
        raise ConfigError("missing 'seed' key")
    top = {"seed", "task", "trials", "jobs", "out", "trace", "scene", "input", "em", "bench"}
    _check_keys(data, top, "top level")

    scene = _build(SceneSpec, data.get("scene", {}), "[scene]")
    input_tbl = data.get("input", {})
    _check_keys(input_tbl, _names(InputSpec), "[input]")
    inputs = InputSpec(**{k: _resolve(base, v, k) for k, v in input_tbl.items()})
    bench_tbl = dict(data.get("bench", {}))
    if "K" in bench_tbl:
        bench_tbl["K"] = tuple(bench_tbl["K"])
    bench = _build(BenchSpec, bench_tbl, "[bench]")

    em_tbl = dict(data.get("em", {}))
    _check_keys(em_tbl, (_names(EMConfig) - _EM_EXCLUDED) | _EM_NESTED, "[em]")
    nested = {k: em_tbl.pop(k) for k in _EM_NESTED if k in em_tbl}
    kw = dict(em_tbl)
    if "anneal" in nested:
        kw["anneal"] = _build(AnnealSchedule, nested["anneal"], "[em.anneal]")
    if "skip" in nested:
        kw["skip"] = _skip_schedule(nested["skip"])
    if "hqs" in nested:
        kw["hqs"] = _build(HQSConfig, nested["hqs"], "[em.hqs]", skip={"sigma"})
    task = data.get("task", "deblur")
    trace = bool(data.get("trace", False))
    try:
        em = EMConfig(seed=int(data["seed"]), task=task, sigma=scene.sigma, trace=trace, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[em]: {exc}") from exc

    trials = int(data.get("trials", 1))
    jobs = int(data.get("jobs", 1))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    out = Path(data.get("out", "out"))
    if not out.is_absolute():
        out = base / out
    return RunConfig(
        seed=int(data["seed"]), em=em, task=task, trials=trials, jobs=jobs, out=out,
        trace=trace, scene=scene, inputs=inputs, bench=bench,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(data, base=path.parent)
    cfg.source = path
    return cfg
