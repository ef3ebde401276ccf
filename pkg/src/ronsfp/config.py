"""Run configuration: JSON schema, validation and translation to solver objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import (BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat,
                      PositiveInt, ValidationError, model_validator)

from . import benchmarks as B
from .assembler import CollocationGrid, HilbertChoice, HilbertMode
from .integrator import TimeGrid
from .mixture import MixtureState, normalize, project_initial_condition
from .operator import DriftModel, Sinusoidal


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# problems


class OUProblem(_Model):
    kind: Literal["ou"]
    gamma: PositiveFloat = 1.0
    sigma: PositiveFloat = 1.0


class BistableProblem(_Model):
    kind: Literal["bistable"]
    sigma: PositiveFloat = 0.5


class DuffingProblem(_Model):
    kind: Literal["duffing"]
    a1: float = 1.0
    a2: float = -0.2
    a3: float = -1.0
    sigma: PositiveFloat = float(1 / np.sqrt(20))


class Forcing(_Model):
    """``amplitude * (sin(omega t + phase) + offset)``"""

    amplitude: float = 1.25
    omega: float = float(np.pi)
    offset: float = 1.5
    phase: float = 0.0


class TrapProblem(_Model):
    kind: Literal["harmonic-trap"]
    dim: PositiveInt = 8
    gamma: float = 0.25
    nu: NonNegativeFloat = 0.01
    forcing: Forcing = Forcing()
    initial_variance: PositiveFloat = 0.1
    initial_mean: Optional[list[float]] = None

    @model_validator(mode="after")
    def _mean_dim(self):
        if self.initial_mean is not None and len(self.initial_mean) != self.dim:
            raise ValueError(f"initial_mean has {len(self.initial_mean)} entries, expected {self.dim}")
        return self


class Monomial(_Model):
    exponents: list[Annotated[int, Field(ge=0)]]
    coef: float


class CustomProblem(_Model):
    kind: Literal["custom-polynomial"]
    drift: list[list[Monomial]] = Field(min_length=1, description="one monomial list per axis")
    diffusion: Union[NonNegativeFloat, list[NonNegativeFloat]]

    @model_validator(mode="after")
    def _shapes(self):
        d = len(self.drift)
        for l, comp in enumerate(self.drift):
            for m in comp:
                if len(m.exponents) != d:
                    raise ValueError(f"drift[{l}] monomial {m.exponents} needs {d} exponents")
        if isinstance(self.diffusion, list) and len(self.diffusion) != d:
            raise ValueError(f"diffusion has {len(self.diffusion)} entries, expected {d}")
        return self


Problem = Annotated[Union[OUProblem, BistableProblem, DuffingProblem, TrapProblem,
                          CustomProblem], Field(discriminator="kind")]


# ---------------------------------------------------------------------------
# ansatz, space, time, ensemble, output


class ExplicitState(_Model):
    amps: list[float]
    widths: list[PositiveFloat]
    centers: list[list[float]]

    @model_validator(mode="after")
    def _lengths(self):
        if not len(self.amps) == len(self.widths) == len(self.centers):
            raise ValueError("amps, widths and centers need one entry per term")
        return self


class GaussianSource(_Model):
    """Gaussian density projected onto the mixture manifold at the start."""

    mean: list[float]
    variance: Union[PositiveFloat, list[PositiveFloat]]


class Ansatz(_Model):
    terms: PositiveInt
    preset: Optional[Literal["benchmark"]] = None
    initial: Optional[ExplicitState] = None
    project: Optional[GaussianSource] = None

    @model_validator(mode="after")
    def _one_source(self):
        given = [k for k in ("preset", "initial", "project") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError("give exactly one of preset, initial, project"
                             + (f" (got {', '.join(given)})" if given else ""))
        if self.initial is not None and len(self.initial.amps) != self.terms:
            raise ValueError(f"initial has {len(self.initial.amps)} terms, expected {self.terms}")
        return self


class Collocation(_Model):
    scheme: Literal["equidistant", "uniform-random", "sampled"] = "equidistant"
    lo: Union[float, list[float]] = -4.0
    hi: Union[float, list[float]] = 4.0
    points: PositiveInt = Field(100, description="per axis for equidistant, total otherwise")


class Space(_Model):
    mode: HilbertMode = HilbertMode.L2_SYMBOLIC
    collocation: Optional[Collocation] = None

    @model_validator(mode="after")
    def _grid(self):
        if (self.mode is HilbertMode.L2_SYMBOLIC) != (self.collocation is None):
            raise ValueError("collocation is required for collocation modes and "
                             "not allowed for L2_symbolic")
        return self


class Time(_Model):
    t0: float = 0.0
    t_end: float
    h0: PositiveFloat = 1e-3
    rtol: PositiveFloat = 1e-8
    atol: PositiveFloat = 1e-10
    max_steps: PositiveInt = 1_000_000
    output_step: Optional[PositiveFloat] = Field(
        None, description="store states on a uniform grid with this spacing")

    @model_validator(mode="after")
    def _order(self):
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        return self


class Equilibrium(_Model):
    window: PositiveFloat = 10.0
    threshold: PositiveFloat = 1e-6


class Ensemble(_Model):
    particles: PositiveInt = 100_000
    h_sde: PositiveFloat = 1e-3
    scheme: Literal["euler-maruyama", "predictor-corrector"] = "euler-maruyama"


class Slices(_Model):
    axes: list[list[Annotated[int, Field(ge=0)]]] = Field(
        default=[[0]], description="each entry is one axis (1D marginal) or two (2D marginal)")
    lo: Union[float, list[float]] = -4.0
    hi: Union[float, list[float]] = 4.0
    points: Annotated[int, Field(ge=2)] = 201
    every: PositiveInt = Field(1, description="write slices at every n-th stored time")

    @model_validator(mode="after")
    def _axes(self):
        for a in self.axes:
            if len(a) not in (1, 2) or len(set(a)) != len(a):
                raise ValueError(f"slice axes {a} must name one or two distinct axes")
        return self


class RunConfig(_Model):
    """Complete description of one solver run."""

    name: str = "run"
    problem: Problem
    ansatz: Ansatz
    space: Space = Space()
    alpha: NonNegativeFloat = 1e-6
    time: Time
    equilibrium: Optional[Equilibrium] = None
    ensemble: Optional[Ensemble] = None
    slices: Slices = Slices()
    output_dir: Optional[str] = None
    seed: Annotated[int, Field(ge=0)] = 0

    @model_validator(mode="after")
    def _consistent(self):
        d = problem_dim(self.problem)
        errs = []
        if self.ansatz.initial is not None:
            bad = [i for i, c in enumerate(self.ansatz.initial.centers) if len(c) != d]
            if bad:
                errs.append(f"ansatz.initial.centers {bad} need {d} coordinates")
        if self.ansatz.project is not None and len(self.ansatz.project.mean) != d:
            errs.append(f"ansatz.project.mean needs {d} entries")
        if self.ansatz.preset is not None and self.problem.kind == "custom-polynomial":
            errs.append("ansatz.preset is only available for the built-in problems")
        if self.ansatz.preset is not None and self.problem.kind in ("bistable", "duffing") \
                and self.ansatz.terms % 2:
            errs.append("ansatz.terms must be even for this preset")
        if self.ansatz.preset is not None and self.problem.kind == "ou":
            if self.ansatz.terms != 1:
                errs.append("ansatz.terms must be 1 for the ou preset")
            if not self.time.t0 > 0:
                errs.append("time.t0 must be positive for the ou preset (point-mass start)")
        if self.space.collocation is not None:
            for key in ("lo", "hi"):
                v = getattr(self.space.collocation, key)
                if isinstance(v, list) and len(v) != d:
                    errs.append(f"space.collocation.{key} needs {d} entries")
        if max((max(a) for a in self.slices.axes), default=0) >= d:
            errs.append(f"slices.axes must be below the dimension {d}")
        if errs:
            raise ValueError("; ".join(errs))
        return self


def problem_dim(problem) -> int:
    return {"ou": 1, "bistable": 1, "duffing": 2}.get(problem.kind) or (
        problem.dim if problem.kind == "harmonic-trap" else len(problem.drift))


def schema() -> dict:
    return RunConfig.model_json_schema()


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for e in exc.errors():
        # drop union-branch tags so the path reads like the JSON document
        loc = [str(p) for p in e["loc"] if not (isinstance(p, str) and p in
                                                 ("ou", "bistable", "duffing", "harmonic-trap",
                                                  "custom-polynomial"))]
        out.append(f"{'.'.join(loc) or '<root>'}: {e['msg']}")
    return out


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    return parse_config(data)


# ---------------------------------------------------------------------------
# translation


def build_drift(cfg: RunConfig) -> DriftModel:
    p = cfg.problem
    if p.kind == "ou":
        return B.ornstein_uhlenbeck(p.gamma, p.sigma)
    if p.kind == "bistable":
        return B.bistable(p.sigma)
    if p.kind == "duffing":
        return B.duffing(p.a1, p.a2, p.a3, p.sigma)
    if p.kind == "harmonic-trap":
        f = p.forcing
        return B.harmonic_trap(p.dim, p.gamma, p.nu,
                               Sinusoidal(f.amplitude, f.omega, f.offset, f.phase))
    comps = []
    for comp in p.drift:
        poly: dict = {}
        for m in comp:
            key = tuple(m.exponents)
            poly[key] = poly.get(key, 0.0) + m.coef
        comps.append(poly)
    return DriftModel(comps, p.diffusion)


def build_initial(cfg: RunConfig) -> MixtureState:
    a, p = cfg.ansatz, cfg.problem
    d = problem_dim(p)
    if a.initial is not None:
        th = MixtureState(a.initial.amps, a.initial.widths, a.initial.centers)
        return normalize(th)
    if a.preset is not None:
        if p.kind == "ou":
            return B.ou_initial(p.gamma, p.sigma, cfg.time.t0)
        if p.kind == "bistable":
            return B.bistable_initial(a.terms)
        if p.kind == "duffing":
            return B.duffing_initial(a.terms)
        return B.trap_initial(a.terms, p.dim, p.initial_variance, p.initial_mean)
    src = a.project
    mean = np.asarray(src.mean, dtype=float)
    var = np.broadcast_to(np.asarray(src.variance, dtype=float), (d,))

    def p0(x):
        x = np.atleast_2d(x)
        z = np.sum((x - mean) ** 2 / var, axis=1)
        return np.exp(-0.5 * z) / np.sqrt(np.prod(2 * np.pi * var))

    # spread the starting guess over the source so distinct terms can specialize
    r = a.terms
    offsets = np.linspace(-1, 1, r)[:, None] * np.sqrt(var)[None, :] if r > 1 else np.zeros((1, d))
    L = float(np.sqrt(2 * var.mean()))
    guess = normalize(MixtureState([1.0] * r, [L] * r, mean + offsets))
    return project_initial_condition(p0, guess)


def _bounds(v, d):
    return np.broadcast_to(np.asarray(v, dtype=float), (d,)).copy()


def build_space(cfg: RunConfig, theta0: MixtureState, rng: np.random.Generator) -> HilbertChoice:
    s = cfg.space
    if s.collocation is None:
        return HilbertChoice(s.mode)
    c, d = s.collocation, theta0.dim
    lo, hi = _bounds(c.lo, d), _bounds(c.hi, d)
    if c.scheme == "equidistant":
        grid = CollocationGrid.equidistant(lo, hi, c.points)
    elif c.scheme == "uniform-random":
        grid = CollocationGrid.uniform_random(lo, hi, c.points, rng)
    else:
        grid = CollocationGrid.from_mixture(theta0, c.points, rng)
    return HilbertChoice(s.mode, grid)


def output_times(cfg: RunConfig) -> Optional[np.ndarray]:
    t = cfg.time
    if t.output_step is None:
        return None
    n = int(np.floor((t.t_end - t.t0) / t.output_step + 1e-9))
    times = t.t0 + t.output_step * np.arange(1, n + 1)
    if times.size == 0 or times[-1] < t.t_end - 1e-12:
        times = np.append(times, t.t_end)
    return times


def build_time_grid(cfg: RunConfig) -> TimeGrid:
    t = cfg.time
    return TimeGrid(t.t0, t.t_end, h0=t.h0, rtol=t.rtol, atol=t.atol,
                    max_steps=t.max_steps, t_eval=output_times(cfg))
