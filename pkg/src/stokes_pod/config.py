"""Run configuration read from flat ``key = value`` text.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Unknown or repeated keys are errors so that typos cannot pass silently.

Example::

    mesh_sizes = 4, 8, 16
    snapshot_mesh = 32
    ranks = 2, 4, 6, 8, 12, 16
    output_dir = results
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "format_config"]


class ConfigError(ValueError):
    pass


def _ints(text):
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(int(s) for s in items)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Study parameters.  Defaults are the reference experiment's settings.

    ``store_every = 0`` keeps about 256 evenly spaced FOM fields per run
    (plus the snapshot window and checkpoints).  ``timing = false`` blanks
    all wall-clock columns so that outputs are byte-reproducible.
    """

    mesh_sizes: tuple = (4, 8, 16)
    dt_coefficient: float = 0.1
    T: float = 1.0
    nu: float = 1.0
    n0: int = 6
    M: int = 20
    ranks: tuple = (2, 4, 6, 8, 12, 16)
    snapshot_mesh: int = 32
    output_dir: str = "results"
    seed: int = 0
    store_every: int = 0
    rank_tolerance: float = 1e-13
    timing: bool = True

    def __post_init__(self):
        if not self.mesh_sizes:
            raise ConfigError("mesh_sizes is empty")
        if any(n < 1 for n in self.mesh_sizes) or self.snapshot_mesh < 1:
            raise ConfigError("mesh sizes must be positive")
        if not self.ranks or any(r < 1 for r in self.ranks):
            raise ConfigError("ranks must be a non-empty list of positive integers")
        if self.dt_coefficient <= 0 or self.T <= 0 or self.nu <= 0:
            raise ConfigError("dt_coefficient, T and nu must be positive")
        if self.n0 < 1 or self.M < 1:
            raise ConfigError("n0 and M must be at least 1")
        if self.store_every < 0 or self.rank_tolerance <= 0:
            raise ConfigError("store_every must be >= 0 and rank_tolerance > 0")

    def fom_config(self, N: int):
        from .fom import FomConfig

        try:
            return FomConfig(N, self.dt_coefficient, self.T, self.nu, self.n0, self.M,
                             store_every=self.store_every or None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_PARSERS = {
    "mesh_sizes": _ints,
    "dt_coefficient": float,
    "T": float,
    "nu": float,
    "n0": int,
    "M": int,
    "ranks": _ints,
    "snapshot_mesh": int,
    "output_dir": str.strip,
    "seed": int,
    "store_every": int,
    "rank_tolerance": float,
    "timing": _bool,
}


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path=None, **overrides) -> RunConfig:
    if path is None:
        return parse_config("", **overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, **overrides)


def format_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(map(str, v))
        elif isinstance(v, bool):
            v = "true" if v else "false"
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
