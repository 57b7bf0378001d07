"""Scenario files: a TOML document describing the plant, atoms, formula and run settings.

Minimal example::

    name = "reach"
    formula = "F[2,5](goal)"
    x0 = [3.0]
    step = 0.01
    seed = 1

    [system]
    kind = "single_integrator"
    n = 1

    [atoms.goal]
    kind = "inf_ball"
    selector = [0]
    center = [0.0]
    radius = 0.5

Selector indices are zero-based positions in the global state vector.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .dynamics import DISTURBANCE_KINDS, SystemModel, build_consensus_system, single_integrator
from .errors import FormulaError, InvalidLaplacian, ParseError, ValidationError
from .funnel import SelectionPolicy
from .hybrid import TaskSettings
from .robustness import SmoothConfig
from .stl_ast import PredicateAtom, SequenceKind, flatten_to_tasks, parse_formula

SYSTEM_KINDS = ("consensus", "single_integrator")
_DIVIDES_TOL = 1e-9


@dataclass
class Scenario:
    name: str
    formula_text: str
    formula: object
    atoms: dict
    system: SystemModel
    x0: np.ndarray
    kind: SequenceKind
    tasks: list
    task_settings: list
    cfg: SmoothConfig = SmoothConfig()
    step: float = 0.01
    seed: int = 0
    policy: SelectionPolicy = SelectionPolicy()
    disturbance_kind: str = "zero"
    disturbance_bound: float = 0.0
    box_bound: Optional[float] = None
    saturation: Optional[float] = None
    duration: Optional[float] = None
    output_dir: str = "out"
    source: Optional[str] = None
    extra: dict = field(default_factory=dict)


def builtin_scenarios():
    """Names of the scenario files shipped with the package."""
    root = resources.files("stlfunnel") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_scenario_path(ref):
    """A filesystem path, or the name of a shipped scenario."""
    path = Path(ref)
    if path.exists():
        return path
    candidate = resources.files("stlfunnel") / "scenarios" / f"{Path(ref).stem}.toml"
    if candidate.is_file():
        return Path(str(candidate))
    raise ValidationError("scenario", f"no file {ref!r} and no shipped scenario of that name "
                                      f"(available: {', '.join(builtin_scenarios())})")


def _line_of(text, key):
    leaf = key.split(".")[-1]
    pat = re.compile(rf"^\s*{re.escape(leaf)}\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return 0


def _number(doc, key, default=None, *, path=None, positive=False, nonneg=False, integer=False):
    name = path or key
    if key not in doc:
        if default is None:
            raise ValidationError(name, "required")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(name, f"expected a number, got {type(v).__name__}")
    if integer and not isinstance(v, int):
        raise ValidationError(name, "expected an integer")
    if not math.isfinite(v):
        raise ValidationError(name, "must be finite")
    if positive and not v > 0:
        raise ValidationError(name, "must be positive")
    if nonneg and not v >= 0:
        raise ValidationError(name, "must be nonnegative")
    return v


def _vector(doc, key, path=None, length=None):
    name = path or key
    if key not in doc:
        raise ValidationError(name, "required")
    v = doc[key]
    if not isinstance(v, list) or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
        raise ValidationError(name, "expected a list of numbers")
    if length is not None and len(v) != length:
        raise ValidationError(name, f"expected {length} entries, got {len(v)}")
    return [float(e) for e in v]


def _table(doc, key):
    v = doc.get(key, {})
    if not isinstance(v, dict):
        raise ValidationError(key, "expected a table")
    return v


def _build_system(doc):
    sysd = _table(doc, "system")
    kind = sysd.get("kind", "consensus")
    if kind not in SYSTEM_KINDS:
        raise ValidationError("system.kind", f"must be one of {SYSTEM_KINDS}")
    if kind == "single_integrator":
        n = _number(sysd, "n", path="system.n", positive=True, integer=True)
        return single_integrator(n)
    L = sysd.get("laplacian")
    if not isinstance(L, list) or not L or not all(isinstance(row, list) for row in L):
        raise ValidationError("system.laplacian", "expected a square matrix (list of rows)")
    d = _number(sysd, "dims_per_agent", 2, path="system.dims_per_agent", positive=True, integer=True)
    try:
        return build_consensus_system(np.array(L, dtype=float), d)
    except (InvalidLaplacian, ValueError) as exc:
        raise ValidationError("system.laplacian", str(exc)) from exc


def _build_atoms(doc, n):
    out = {}
    for name, spec in _table(doc, "atoms").items():
        path = f"atoms.{name}"
        if not isinstance(spec, dict):
            raise ValidationError(path, "expected a table")
        kind = spec.get("kind", "halfspace")
        scale = _number(spec, "scale", 1.0, path=f"{path}.scale", positive=True)
        try:
            if kind == "halfspace":
                atom = PredicateAtom.halfspace(
                    name, _vector(spec, "normal", f"{path}.normal", n),
                    _number(spec, "offset", path=f"{path}.offset"), scale)
            elif kind == "inf_ball":
                sel = spec.get("selector")
                if not isinstance(sel, list) or not all(isinstance(i, int) for i in sel):
                    raise ValidationError(f"{path}.selector", "expected a list of integer indices")
                atom = PredicateAtom.inf_ball(
                    name, sel, _vector(spec, "center", f"{path}.center", len(sel)),
                    _number(spec, "radius", path=f"{path}.radius", positive=True), scale)
            else:
                raise ValidationError(f"{path}.kind", "must be 'halfspace' or 'inf_ball'")
            atom.check_dimension(n)
        except FormulaError as exc:
            raise ValidationError(path, str(exc)) from exc
        out[name] = atom
    return out


def _check_divides(step, value, what):
    if math.isinf(value):
        return
    ratio = value / step
    if abs(ratio - round(ratio)) > _DIVIDES_TOL * max(1.0, abs(ratio)):
        raise ValidationError("step", f"must divide window endpoints ({what} = {value:g})")


def _task_settings(doc, N):
    rows = doc.get("tasks", [])
    if not isinstance(rows, list):
        raise ValidationError("tasks", "expected an array of tables ([[tasks]])")
    settings = [TaskSettings() for _ in range(N)]
    seen = set()
    for row in rows:
        if not isinstance(row, dict):
            raise ValidationError("tasks", "expected an array of tables ([[tasks]])")
        q = _number(row, "index", path="tasks.index", integer=True)
        if not 1 <= q <= N:
            raise ValidationError("tasks.index", f"{q} outside 1..{N}")
        if q in seen:
            raise ValidationError("tasks.index", f"task {q} configured twice")
        seen.add(q)
        r = _number(row, "r", 0.0, path=f"tasks[{q}].r", nonneg=True)
        rho_max = _number(row, "rho_max", math.nan, path=f"tasks[{q}].rho_max", positive=True)
        t_star = _number(row, "t_star", math.nan, path=f"tasks[{q}].t_star", nonneg=True)
        settings[q - 1] = TaskSettings(r, None if math.isnan(rho_max) else rho_max,
                                       None if math.isnan(t_star) else t_star)
    return settings


def _policy(doc):
    pol = _table(doc, "policy")
    base = SelectionPolicy()
    kwargs = {}
    for key in ("eta", "gamma0_margin", "gamma_inf_fraction", "l_free"):
        if key in pol:
            kwargs[key] = _number(pol, key, path=f"policy.{key}")
    unknown = set(pol) - {"eta", "gamma0_margin", "gamma_inf_fraction", "l_free"}
    if unknown:
        raise ValidationError(f"policy.{sorted(unknown)[0]}", "unknown key")
    try:
        return SelectionPolicy(**{**base.__dict__, **kwargs})
    except ValueError as exc:
        raise ValidationError("policy", str(exc)) from exc


def scenario_from_dict(doc, *, name=None, source=None):
    """Validate a parsed scenario document and build the :class:`Scenario`."""
    if "formula" not in doc:
        raise ValidationError("formula", "required")
    if not isinstance(doc["formula"], str):
        raise ValidationError("formula", "expected a string")
    system = _build_system(doc)
    n = system.n
    x0 = np.array(_vector(doc, "x0", length=n))
    atoms = _build_atoms(doc, n)

    box = _table(doc, "box")
    box_bound = None
    if box.get("enabled", False):
        box_bound = _number(box, "bound", 100.0, path="box.bound", positive=True)
        if not np.max(np.abs(x0)) < box_bound:
            raise ValidationError("x0", f"outside the box ||x||_inf < {box_bound:g}")

    try:
        formula = parse_formula(doc["formula"], atoms)
        kind, tasks = flatten_to_tasks(formula, n, box_bound)
    except FormulaError as exc:
        raise ValidationError("formula", str(exc)) from exc

    step = _number(doc, "step", 0.01, positive=True)
    for t in tasks:
        _check_divides(step, t.window[0], f"task {t.index} window start")
        _check_divides(step, t.window[1], f"task {t.index} window end")
        _check_divides(step, t.cumulative_window[1], f"task {t.index} cumulative window end")

    smoothing = _table(doc, "smoothing")
    cfg = SmoothConfig(_number(smoothing, "k", 1.0, path="smoothing.k", positive=True))

    dist = _table(doc, "disturbance")
    dkind = dist.get("kind", "zero")
    if dkind not in DISTURBANCE_KINDS:
        raise ValidationError("disturbance.kind", f"must be one of {DISTURBANCE_KINDS}")
    dbound = _number(dist, "bound", 0.0, path="disturbance.bound", nonneg=True)

    settings = _task_settings(doc, len(tasks))
    for s, t in zip(settings, tasks):
        if s.t_star is not None:
            _check_divides(step, s.t_star, f"task {t.index} t_star")

    out = _table(doc, "output")
    duration = doc.get("duration")
    if duration is not None:
        duration = _number(doc, "duration", positive=True)
        _check_divides(step, duration, "duration")
    saturation = doc.get("saturation")
    if saturation is not None:
        saturation = _number(doc, "saturation", positive=True)

    seed = _number(doc, "seed", 0, integer=True, nonneg=True)
    return Scenario(
        name=str(doc.get("name", name or "scenario")), formula_text=doc["formula"], formula=formula,
        atoms=atoms, system=system, x0=x0, kind=kind, tasks=tasks, task_settings=settings,
        cfg=cfg, step=float(step), seed=int(seed), policy=_policy(doc),
        disturbance_kind=dkind, disturbance_bound=float(dbound), box_bound=box_bound,
        saturation=saturation, duration=duration, output_dir=str(out.get("dir", "out")),
        source=source,
    )


def loads_scenario(text, *, name=None, source=None):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else 0
        raw = text.splitlines()[line - 1] if 0 < line <= len(text.splitlines()) else ""
        key = raw.split("=", 1)[0].strip() if "=" in raw else None
        raise ParseError(line, key, str(exc)) from exc
    try:
        return scenario_from_dict(doc, name=name, source=source)
    except ValidationError as exc:
        exc.line = _line_of(text, exc.key)
        raise


def load_scenario(path):
    """Read and validate a scenario file (or a shipped scenario referenced by name)."""
    p = resolve_scenario_path(path)
    return loads_scenario(p.read_text(encoding="utf-8"), name=p.stem, source=str(p))


def with_seed(scenario, seed):
    return replace(scenario, seed=int(seed))
