"""Flat ``key = value`` experiment configuration.

Blank lines and anything after ``#`` are ignored. Unknown keys are
rejected. Lists are comma separated. Unset keys take model-dependent
defaults (see :data:`MODEL_DEFAULTS`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "MODEL_DEFAULTS"]


class ConfigError(ValueError):
    pass


MODEL_DEFAULTS = {
    "reaction_diffusion": {"nx": 31, "sigma": 0.1},
    "burgers": {"nx": 41, "sigma": 0.01},
    "toy": {"nx": 11, "sigma": 0.1},
}


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    model: str = "reaction_diffusion"
    nx: int | None = None
    sigma: float | None = None
    mu: float = 5.0
    convection: str = "upwind"
    t0: float = 0.0
    T: float = 1.0
    dt: float = 0.1
    dt_online: float | None = None
    controls: int = 2
    controls_online: int | None = None
    u_lo: float = -2.0
    u_hi: float = 0.0
    epsilon: float = 0.01
    prune_strategy: str = "sorted"
    max_nodes: int = 0
    stepper: str = "implicit"
    newton_tol: float = 1e-4
    newton_max_iter: int = 50
    control_weight: float = 0.01
    discount: float = 0.0
    reduction: str = "auto"
    energy: float = 0.999
    rank: int = 0
    deim_k: int = 0
    deim_method: str = "greedy"
    snapshot_source: str = "tree"
    snapshot_dt: float = 0.1
    snapshot_controls: int = 2
    write_tree: bool = True
    seed: int = 0
    # validation suite
    val_controls: tuple[int, ...] = (1, 2, 3)
    val_steps: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    val_ells: tuple[int, ...] = (2, 4, 6, 8, 10)
    val_error_T: float = 0.6
    conv_T: float = 0.4
    conv_dts: tuple[float, ...] = (0.1, 0.05)
    conv_dt_ref: float = 0.025
    conv_ells: tuple[int, ...] = (1, 2, 3, 4, 6)
    prune_epsilons: tuple[float, ...] = (0.1, 0.01, 0.001, 0.0)
    source: str = field(default="<defaults>", repr=False)

    def __post_init__(self):
        d = MODEL_DEFAULTS.get(self.model)
        if d is None:
            raise ConfigError(f"{self.source}: model: expected one of {sorted(MODEL_DEFAULTS)}, got {self.model!r}")
        if self.nx is None:
            self.nx = d["nx"]
        if self.sigma is None:
            self.sigma = d["sigma"]
        if self.dt_online is None:
            self.dt_online = self.dt
        if self.controls_online is None:
            self.controls_online = self.controls
        self.validate()

    def _fail(self, key, msg):
        raise ConfigError(f"{self.source}: {key}: {msg}")

    def validate(self):
        for key in ("sigma", "mu", "dt", "dt_online", "snapshot_dt", "newton_tol", "energy", "conv_T",
                    "conv_dt_ref", "val_error_T"):
            if not getattr(self, key) > 0:
                self._fail(key, f"must be positive, got {getattr(self, key)}")
        for key in ("epsilon", "control_weight", "discount"):
            if getattr(self, key) < 0:
                self._fail(key, f"must be non-negative, got {getattr(self, key)}")
        for key in ("controls", "controls_online", "snapshot_controls", "newton_max_iter"):
            if getattr(self, key) < 1:
                self._fail(key, f"must be at least 1, got {getattr(self, key)}")
        for key in ("rank", "deim_k", "max_nodes"):
            if getattr(self, key) < 0:
                self._fail(key, f"must be non-negative, got {getattr(self, key)}")
        if self.nx < 3:
            self._fail("nx", f"need at least 3 grid points, got {self.nx}")
        if self.T <= self.t0:
            self._fail("T", f"must exceed t0={self.t0}")
        if self.energy > 1:
            self._fail("energy", f"must lie in (0, 1], got {self.energy}")
        if self.u_lo > self.u_hi:
            self._fail("u_lo", f"exceeds u_hi ({self.u_lo} > {self.u_hi})")
        if self.u_lo == self.u_hi and max(self.controls, self.controls_online, self.snapshot_controls) > 1:
            self._fail("u_hi", "equal bounds allow a single control only")
        choices = {
            "convection": ("upwind", "centered"),
            "prune_strategy": ("sorted", "allpairs"),
            "stepper": ("implicit", "explicit"),
            "reduction": ("auto", "full_lift", "deim", "tensor"),
            "deim_method": ("greedy", "qr"),
            "snapshot_source": ("tree", "constant"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                self._fail(key, f"expected one of {allowed}, got {getattr(self, key)!r}")
        if not self.val_controls or min(self.val_controls) < 1:
            self._fail("val_controls", "need positive control counts")
        if not self.val_steps or min(self.val_steps) < 1:
            self._fail("val_steps", "need positive step counts")
        if not self.val_ells or min(self.val_ells) < 1 or not self.conv_ells or min(self.conv_ells) < 1:
            self._fail("val_ells", "need positive ranks")
        if not self.conv_dts or min(self.conv_dts) <= 0:
            self._fail("conv_dts", "need positive steps")
        if any(e < 0 for e in self.prune_epsilons):
            self._fail("prune_epsilons", "need non-negative thresholds")

    @property
    def resolved_reduction(self) -> str:
        if self.reduction != "auto":
            return self.reduction
        return "tensor" if self.model == "burgers" else "deim"

    def to_text(self) -> str:
        """Round-trippable config text with every key set."""
        out = []
        for f in fields(self):
            if f.name == "source":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


_CONVERT = {
    "int": int, "int | None": int, "float": float, "float | None": float, "str": str, "bool": _bool,
    "tuple[int, ...]": _ints, "tuple[float, ...]": _floats,
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig) if f.name != "source"}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONVERT[types[key]](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return ExperimentConfig(**values, source=source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
