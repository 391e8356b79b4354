"""Experiment configuration: strict YAML schema with key-path and line-number error context."""

from __future__ import annotations

from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

KINDS = ("EnvelopeCertify", "SolveBsde", "TruncationLadder", "Comparison", "Stability",
         "FeynmanKac", "GrowthCheck", "SelfTest")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Named(_Strict):
    name: str
    args: dict[str, Any] = Field(default_factory=dict)


class GridCfg(_Strict):
    n_s: int = 50
    n_x: int = 50
    x_hi: float = 50.0
    n_z: int = 50
    z_hi: float = 100.0


class EnvelopeCfg(_Strict):
    alpha: float
    beta: float = 0.0
    gamma: float = 1.0
    eps: float
    T: float = 1.0
    n_curve_samples: int = 101
    grid: GridCfg = Field(default_factory=GridCfg)


class ProblemCfg(_Strict):
    diffusion: Named = Field(default_factory=lambda: Named(name="brownian"))
    generator: Named
    terminal: Named
    t0: float = 0.0
    x0: list[float] = Field(default_factory=lambda: [0.0])
    T: float = 1.0
    terminal_shift: float = 0.0
    generator_shift: float = 0.0


class BasisCfg(_Strict):
    kind: Literal["polynomial", "bins"] = "polynomial"
    degree: int = 4
    n_bins: int = 32


class McCfg(_Strict):
    n_paths: int = 20000
    n_steps: int = 100
    picard_tol: float = 1e-10
    picard_max: int = 50
    basis: BasisCfg = Field(default_factory=BasisCfg)


class TruncationCfg(_Strict):
    n_list: list[float] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    p_list: list[float] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    slack: float = 2.0  # monotonicity tolerance in stderr units


class AprioriCfg(_Strict):
    enabled: bool = False
    mu_factor: float = 1.1  # mu(T) = mu_factor * mu_zero, epsilon matched to it


class StabilityCfg(_Strict):
    n_max: int = 6
    terminal_shape: Optional[Named] = None
    generator_shape: Optional[Named] = None


class PdeCfg(_Strict):
    diffusion: Named = Field(default_factory=lambda: Named(name="brownian"))
    generator: Named
    terminal: Named
    x_lo: float = -3.0
    x_hi: float = 3.0
    T: float = 1.0
    boundary: Literal["extrapolate", "dirichlet_terminal"] = "extrapolate"


class FdCfg(_Strict):
    n_t: int = 2000
    n_x: int = 241


class GrowthCfg(_Strict):
    p: float
    split: float = 10.0
    factor: float = 2.0


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    name: str = "experiment"
    seed: int = 12345
    output_dir: str = "out"
    deterministic: bool = False
    envelope: Optional[EnvelopeCfg] = None
    problem: Optional[ProblemCfg] = None
    problem_prime: Optional[ProblemCfg] = None
    mc: McCfg = Field(default_factory=McCfg)
    truncation: TruncationCfg = Field(default_factory=TruncationCfg)
    apriori: AprioriCfg = Field(default_factory=AprioriCfg)
    stability: StabilityCfg = Field(default_factory=StabilityCfg)
    pde: Optional[PdeCfg] = None
    fd: FdCfg = Field(default_factory=FdCfg)
    points: list[tuple[float, float]] = Field(default_factory=list)
    growth: Optional[GrowthCfg] = None

    @model_validator(mode="after")
    def _sections(self):
        need = {
            "EnvelopeCertify": ["envelope"],
            "SolveBsde": ["problem"],
            "TruncationLadder": ["problem"],
            "Comparison": ["problem", "problem_prime"],
            "Stability": ["problem"],
            "FeynmanKac": ["pde"],
            "GrowthCheck": ["pde", "growth"],
            "SelfTest": [],
        }[self.kind]
        missing = [s for s in need if getattr(self, s) is None]
        if missing:
            raise ValueError(f"kind {self.kind} requires section(s): {', '.join(missing)}")
        return self


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based source lines using the YAML node tree."""
    out: dict[tuple, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                out[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = _line_index(text)
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            # literal/union branches append type tags; trim to the longest known prefix
            line = None
            for cut in range(len(loc), -1, -1):
                if loc[:cut] in lines:
                    line = lines[loc[:cut]]
                    break
            key = ".".join(str(p) for p in loc) or "<root>"
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: {key}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
