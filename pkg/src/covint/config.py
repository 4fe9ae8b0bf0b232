"""Experiment configuration: one TOML file per run.

The seed is mandatory — experiments never fall back to wall-clock entropy,
so a config uniquely determines every output byte.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigInvalidError
from .simulate import SemimartingaleModel, power_drift
from .stoch_kernel import TimeGrid

KINDS = ("kernel", "integrate", "viability", "hedge-tree", "hjm", "refine-study")

# file references each kind must provide (checked for existence up front)
_REQUIRED_FILES = {
    "kernel": ("kernel", "vectors"),
    "hedge-tree": ("tree", "stream"),
}
_NEEDS_GRID = ("integrate", "viability", "hjm", "refine-study")
_NEEDS_MODEL = ("integrate", "viability", "refine-study")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    out_dir: Path
    base_dir: Path
    grid: TimeGrid | None = None
    n_paths: int = 0
    tolerances: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def tolerance(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


def _require(table: dict, key: str, path) -> object:
    if key not in table:
        raise ConfigInvalidError(f"{path}: missing required key '{key}'")
    return table[key]


def _parse_grid(table: object, path) -> TimeGrid:
    if not isinstance(table, dict):
        raise ConfigInvalidError(f"{path}: [grid] must be a table")
    try:
        return TimeGrid.uniform(
            float(_require(table, "horizon", path)),
            int(_require(table, "steps", path)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalidError(f"{path}: bad grid ({exc})") from exc


def parse_model(table: object, path="<config>") -> SemimartingaleModel:
    """Build a coefficient model from its [model] table.

    Constant drift rates may be replaced by per-asset power laws via
    ``drift_exponents`` (rate * t^exponent), which is how the singular
    structural-condition examples are configured.
    """
    if not isinstance(table, dict):
        raise ConfigInvalidError(f"{path}: [model] must be a table")
    labels = [str(x) for x in _require(table, "labels", path)]
    initial = [float(x) for x in _require(table, "initial", path)]
    rates = np.asarray(_require(table, "drift", path), dtype=float)
    loadings = np.asarray(_require(table, "loadings", path), dtype=float)
    try:
        if "drift_exponents" in table:
            exps = [float(e) for e in table["drift_exponents"]]
            if len(exps) != len(labels) or rates.shape != (len(labels),):
                raise ValueError("drift/drift_exponents must match label count")
            laws = [power_drift(float(r), e) for r, e in zip(rates, exps)]
            sig = loadings.copy()
            return SemimartingaleModel(
                tuple(labels),
                initial,
                lambda t: np.array([law(t) for law in laws]),
                lambda t: sig,
                sig.shape[1],
            )
        return SemimartingaleModel.constant(labels, initial, rates, loadings)
    except ValueError as exc:
        raise ConfigInvalidError(f"{path}: bad model ({exc})") from exc


def load_config(path, *, seed=None, out_dir=None) -> ExperimentConfig:
    """Parse and validate a TOML experiment config.

    ``seed`` and ``out_dir`` override the file's values (command line wins).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalidError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalidError(f"{path}: not valid TOML ({exc})") from exc

    kind = str(raw.get("kind", ""))
    if kind not in KINDS:
        raise ConfigInvalidError(
            f"{path}: kind must be one of {', '.join(KINDS)} (got {kind!r})"
        )

    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        raise ConfigInvalidError(f"{path}: seed is required (none given)")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigInvalidError(f"{path}: seed must fit in 64 bits")

    base_dir = path.parent.resolve()
    out = Path(out_dir) if out_dir is not None else Path(raw.get("out", "out"))
    if not out.is_absolute():
        out = base_dir / out

    grid = None
    if kind in _NEEDS_GRID or "grid" in raw:
        grid = _parse_grid(_require(raw, "grid", path), path)

    files = {}
    for key, value in raw.get("files", {}).items():
        ref = Path(value)
        if not ref.is_absolute():
            ref = base_dir / ref
        if not ref.is_file():
            raise ConfigInvalidError(f"{path}: referenced file missing: {ref}")
        files[key] = ref
    for key in _REQUIRED_FILES.get(kind, ()):
        if key not in files:
            raise ConfigInvalidError(f"{path}: [files] must reference '{key}'")

    params = {
        k: v
        for k, v in raw.items()
        if k not in ("kind", "seed", "out", "grid", "files", "tolerances")
    }
    if kind in _NEEDS_MODEL:
        parse_model(_require(raw, "model", path), path)  # validate eagerly

    n_paths = int(raw.get("n_paths", 0))
    if n_paths < 0:
        raise ConfigInvalidError(f"{path}: n_paths must be nonnegative")

    tolerances = raw.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigInvalidError(f"{path}: [tolerances] must be a table")

    return ExperimentConfig(
        kind=kind,
        seed=seed,
        out_dir=out,
        base_dir=base_dir,
        grid=grid,
        n_paths=n_paths,
        tolerances=dict(tolerances),
        files=files,
        params=params,
    )
