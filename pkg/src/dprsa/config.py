"""Run configuration files (TOML) with strict schema validation.

Layout::

    output = "runs/clean.csv"       # optional; stdout when absent

    [sim]                           # any SimConfig field; "lambda" maps to lam
    algorithm = "dp_rsa_gauss"
    rounds = 200

    [sim.attack]                    # any AttackSpec field
    kind = "gaussian"

    [data]
    source = "synthetic"            # or "mnist"

    [data.synthetic]                # SyntheticSpec fields plus the test split
    dim = 20
    test_samples_per_class = 100

    [data.mnist]
    train_images = "train-images-idx3-ubyte.gz"
    ...

Two environment variables may override a loaded file: ``DP_RSA_SEED``
replaces ``sim.seed`` and ``DP_RSA_OUT`` replaces the directory of ``output``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import tomli

from .attacks import AttackSpec
from .data import Dataset, SyntheticSpec, gen_synthetic, load_idx
from .errors import ConfigError, DprsaError
from .fedsim import SimConfig

SEED_ENV = "DP_RSA_SEED"
OUT_ENV = "DP_RSA_OUT"
DEFAULT_OUTPUT_NAME = "run.csv"

MNIST_KEYS = ("train_images", "train_labels", "test_images", "test_labels")
SYNTH_EXTRA = {"test_samples_per_class": 100, "test_seed": None}
# File spelling -> SimConfig field.
SIM_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class DataSource:
    kind: str
    synthetic: Optional[SyntheticSpec] = None
    test_samples_per_class: int = 100
    test_seed: Optional[int] = None
    mnist: Optional[dict] = None

    def load(self) -> tuple[Dataset, Dataset]:
        """Materialize ``(train, test)``. IDX failures surface as DatasetError."""
        if self.kind == "mnist":
            m = self.mnist
            return (
                load_idx(m["train_images"], m["train_labels"]),
                load_idx(m["test_images"], m["test_labels"]),
            )
        spec = self.synthetic
        test_seed = self.test_seed if self.test_seed is not None else spec.seed + 1
        test_spec = dataclasses.replace(
            spec, samples_per_class=self.test_samples_per_class, seed=test_seed
        )
        return gen_synthetic(spec), gen_synthetic(test_spec)


@dataclass(frozen=True)
class RunConfigFile:
    sim: SimConfig
    data: DataSource
    output: Optional[Path] = None


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _reject_unknown(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _expect_table(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"[{where}] must be a table")
    return value


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except DprsaError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def _parse_sim(table: dict) -> SimConfig:
    table = dict(table)
    attack_table = _expect_table(table.pop("attack", {}), "sim.attack")
    _reject_unknown(attack_table, _field_names(AttackSpec), "sim.attack")
    attack = _build(AttackSpec, attack_table, "sim.attack")

    fields = _field_names(SimConfig) - {"attack"}
    kwargs = {}
    for key, value in table.items():
        name = SIM_ALIASES.get(key, key)
        if name not in fields or key in SIM_ALIASES.values():
            raise ConfigError(f"unknown key(s) in [sim]: {key}")
        kwargs[name] = value
    return _build(SimConfig, {**kwargs, "attack": attack}, "sim")


def _parse_data(table: dict, base: Path) -> DataSource:
    _reject_unknown(table, {"source", "synthetic", "mnist"}, "data")
    source = table.get("source")
    if source == "synthetic":
        synth = dict(_expect_table(table.get("synthetic", {}), "data.synthetic"))
        _reject_unknown(synth, _field_names(SyntheticSpec) | set(SYNTH_EXTRA), "data.synthetic")
        extra = {k: synth.pop(k, v) for k, v in SYNTH_EXTRA.items()}
        if extra["test_samples_per_class"] < 1:
            raise ConfigError("[data.synthetic] test_samples_per_class must be >= 1")
        spec = _build(SyntheticSpec, synth, "data.synthetic")
        return DataSource("synthetic", synthetic=spec, **extra)
    if source == "mnist":
        mnist = _expect_table(table.get("mnist"), "data.mnist")
        _reject_unknown(mnist, MNIST_KEYS, "data.mnist")
        missing = [k for k in MNIST_KEYS if k not in mnist]
        if missing:
            raise ConfigError(f"[data.mnist] missing key(s): {', '.join(missing)}")
        paths = {k: base / Path(mnist[k]).expanduser() for k in MNIST_KEYS}
        return DataSource("mnist", mnist=paths)
    raise ConfigError("[data] source must be 'synthetic' or 'mnist'")


def parse_config(doc: dict, base: Path = Path("."), env=None) -> RunConfigFile:
    """Validate a decoded TOML document; relative paths resolve against ``base``."""
    env = os.environ if env is None else env
    _reject_unknown(doc, {"output", "sim", "data"}, "top level")
    sim_table = dict(_expect_table(doc.get("sim", {}), "sim"))
    if SEED_ENV in env:
        try:
            sim_table["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    sim = _parse_sim(sim_table)
    if "data" not in doc:
        raise ConfigError("missing [data] table")
    data = _parse_data(_expect_table(doc["data"], "data"), base)

    output = doc.get("output")
    if output is not None:
        output = base / Path(output)
    if env.get(OUT_ENV):
        name = output.name if output is not None else DEFAULT_OUTPUT_NAME
        output = Path(env[OUT_ENV]) / name
    return RunConfigFile(sim, data, output)


def load_config(path, env=None) -> RunConfigFile:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, base=path.parent, env=env)
