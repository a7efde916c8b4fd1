"""Run configuration: plain key=value files with command-line overrides.

Defaults follow the standard operating point: dtau = a^2/4, convergence
checked every 100 sweeps at relative tolerance 1e-6, snapshots every
10 checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .lattice import LatticeSpec
from .states import SymmetryConstraint

__all__ = ["RunConfig", "parse_config_file"]

_POTENTIALS = ("harmonic", "coulomb", "dodecahedron", "file")
_TRANSPORTS = ("inproc", "tcp")
_NONE_TOKENS = ("", "none", "auto", "default")


@dataclass(frozen=True)
class RunConfig:
    N: int = 64
    a: float = 0.1
    m: float = 1.0
    dtau: float | None = None  # auto: a^2/4
    potential: str = "harmonic"
    depth: float = -100.0
    potential_file: str | None = None
    tol: float = 1e-6
    check_freq: int = 100
    snap_freq: int | None = None  # auto: 10*check_freq
    max_steps: int = 1_000_000
    max_snapshots: int = 8
    reimpose_freq: int | None = None  # auto: check_freq
    workers: int = 1
    transport: str = "inproc"
    endpoints: tuple[str, ...] = ()
    seed: int = 1
    symmetry: tuple[SymmetryConstraint, ...] = ()
    excited_count: int = 0
    polish_steps: int | None = None  # auto: 10*check_freq
    bootstrap: tuple[int, ...] = ()
    carry_coefficients: tuple[float, ...] | None = None
    output_dir: str = "."

    @property
    def resolved_dtau(self) -> float:
        return self.a * self.a / 4.0 if self.dtau is None else self.dtau

    @property
    def L(self) -> float:
        return self.N * self.a

    def spec(self) -> LatticeSpec:
        return LatticeSpec(N=self.N, a=self.a, m=self.m, dtau=self.resolved_dtau)

    def stage_spec(self, n_stage: int) -> LatticeSpec:
        """Lattice for one bootstrap stage at fixed box length."""
        a = self.L / n_stage
        dtau = self.resolved_dtau if n_stage == self.N else a * a / 4.0
        return LatticeSpec(N=n_stage, a=a, m=self.m, dtau=dtau)

    def make_grid(self, spec: LatticeSpec):
        from . import potential as pot

        if self.potential == "harmonic":
            return pot.harmonic(spec)
        if self.potential == "coulomb":
            return pot.coulomb(spec)
        if self.potential == "dodecahedron":
            return pot.dodecahedron(spec, depth=self.depth)
        if self.potential == "file":
            return pot.from_file(self.potential_file, spec)
        raise ConfigError(f"unknown potential {self.potential!r}")

    def validate(self) -> "RunConfig":
        self.spec()  # lattice invariants
        if self.potential not in _POTENTIALS:
            raise ConfigError(
                f"potential must be one of {', '.join(_POTENTIALS)}, got {self.potential!r}")
        if self.potential == "file" and not self.potential_file:
            raise ConfigError("potential=file requires potential_file=<path>")
        if self.transport not in _TRANSPORTS:
            raise ConfigError(
                f"transport must be one of {', '.join(_TRANSPORTS)}, got {self.transport!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.N % self.workers:
            raise ConfigError(f"N={self.N} not divisible by workers={self.workers}")
        if self.transport == "tcp" and len(self.endpoints) != self.workers:
            raise ConfigError("tcp transport needs one endpoint per worker")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.check_freq < 1:
            raise ConfigError("check_freq must be >= 1")
        if self.excited_count < 0:
            raise ConfigError("excited_count must be >= 0")
        if self.bootstrap:
            ladder = list(self.bootstrap)
            if ladder[-1] != self.N:
                raise ConfigError(
                    f"bootstrap ladder must end at N={self.N}, got {ladder}")
            if any(b >= c for b, c in zip(ladder, ladder[1:])):
                raise ConfigError("bootstrap ladder must strictly increase")
            for n_stage in ladder:
                if n_stage % self.workers:
                    raise ConfigError(
                        f"bootstrap stage N={n_stage} not divisible by workers={self.workers}")
            if self.transport == "tcp":
                raise ConfigError("bootstrap runs need the inproc transport")
        return self


_INT_KEYS = {"N", "check_freq", "max_steps", "max_snapshots", "workers",
             "seed", "excited_count"}
_OPT_INT_KEYS = {"snap_freq", "reimpose_freq", "polish_steps"}
_FLOAT_KEYS = {"a", "m", "depth", "tol"}
_OPT_FLOAT_KEYS = {"dtau"}
_STR_KEYS = {"potential", "transport", "output_dir"}
_OPT_STR_KEYS = {"potential_file"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    low = raw.lower()
    if key in _INT_KEYS:
        return int(raw)
    if key in _OPT_INT_KEYS:
        return None if low in _NONE_TOKENS else int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _OPT_FLOAT_KEYS:
        return None if low in _NONE_TOKENS else float(raw)
    if key in _STR_KEYS:
        return raw
    if key in _OPT_STR_KEYS:
        return None if low in _NONE_TOKENS else raw
    if key == "symmetry":
        if low in _NONE_TOKENS:
            return ()
        return tuple(SymmetryConstraint.from_token(t) for t in raw.split(",") if t.strip())
    if key == "bootstrap":
        if low in _NONE_TOKENS:
            return ()
        return tuple(int(t) for t in raw.split(",") if t.strip())
    if key == "carry_coefficients":
        if low in _NONE_TOKENS:
            return None
        return tuple(float(t) for t in raw.split(",") if t.strip())
    if key == "endpoints":
        if low in _NONE_TOKENS:
            return ()
        return tuple(t.strip() for t in raw.replace(";", ",").split(",") if t.strip())
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_file(path) -> dict:
    """Read key=value lines; '#' starts a comment."""
    values: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, raw = text.split("=", 1)
            key = key.strip()
            values[key] = _parse_value(key, raw)
    return values


def build_config(file_path=None, overrides=()) -> RunConfig:
    """Config file plus key=value overrides, validated."""
    values: dict = {}
    if file_path is not None:
        values.update(parse_config_file(file_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values).validate()


def format_config(cfg: RunConfig) -> str:
    """Serialize back to the key=value format (for worker processes)."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "symmetry":
            value = ",".join(
                ("S" if c.parity == "symmetric" else "A") + c.axis for c in value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "auto"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
