"""Conformation generation: ligand relax, seeded energetic kick, pocket minimization.

One run per seed starts from a shared ligand-relaxed state, perturbs the
micro-group parameters with a keyed uniform kick (plus optional ring flips)
and minimizes every movable parameter with Adam. The aggressive preset adds
a whole-ligand kick before the relax, longer and faster ligand relaxation,
scaled ligand gradients, more conformations and optional extension runs.
"""

from __future__ import annotations

import ast
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import NonFiniteEnergy, NonFiniteGradient, SingularPair
from .features import FormationEnergy
from .ffenergy import EnergyBreakdown, NonbondedSettings
from .gradient import CostFunction
from .molio import MolecularSystem
from .optim import Adam, milestone_steps
from .segmentation import MICRO_KINDS, SegmentationPlan
from .transform import MODES, TransformParams

__all__ = [
    "ProtocolConfig",
    "EnergyTrace",
    "RunRecord",
    "KickDraws",
    "read_config",
    "ligand_param_mask",
    "relax_ligand",
    "draw_kick",
    "draw_ligand_kick",
    "apply_kick",
    "minimize",
    "generate_conformations",
    "extend_record",
    "needs_extension",
]

PRESETS = ("gentle", "aggressive")
STATUSES = ("converged", "extended", "failed")

# key for the whole-ligand kick stream; distinct from every micro-group kind code
LIGAND_MACRO_KEY = (len(MICRO_KINDS) + 1, 0)


@dataclass
class ProtocolConfig:
    n_relax_steps: int = 200
    n_minimize_steps: int = 2000
    kick_T_range: float = 1.5
    kick_R_range: float = 0.15
    ring_flip_probability: float = 0.5
    clash_radius: float = 1.0
    # None: range(10) in the gentle preset, range(conformations_per_pair) in the aggressive one
    seeds: list[int] | None = None
    learning_rate: float = 1e-3
    lr_milestones: tuple[float, ...] = (0.5, 0.75)
    lr_decay: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    preset: str = "gentle"
    # aggressive preset
    ligand_kick_R_range: float = math.pi
    ligand_kick_T_vector: tuple[float, float, float] = (-3.0, -9.0, -9.0)
    ligand_relax_steps: int = 10000
    ligand_lr_multiplier: float = 100.0
    ligand_grad_multiplier: float = 3.0
    conformations_per_pair: int = 30
    extension_steps: int = 5000
    # None disables automatic extension; otherwise |dE_total/dstep| over the last window
    extension_slope_threshold: float | None = None
    extension_window: int = 100
    # None: standard (gentle) or ligand_whole_body (aggressive)
    mode: str | None = None
    relax_seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}")
        if self.mode is not None and self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("n_relax_steps", "n_minimize_steps", "ligand_relax_steps", "conformations_per_pair", "extension_steps", "extension_window"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("kick_T_range", "kick_R_range", "clash_radius", "learning_rate", "ligand_kick_R_range", "ligand_lr_multiplier", "ligand_grad_multiplier"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.ring_flip_probability <= 1.0:
            raise ValueError("ring_flip_probability must be in [0, 1]")
        if self.seeds is not None:
            self.seeds = [int(s) for s in self.seeds]
            if any(s < 0 for s in self.seeds):
                raise ValueError("seeds must be non-negative")
        self.lr_milestones = tuple(float(f) for f in self.lr_milestones)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        self.ligand_kick_T_vector = tuple(float(v) for v in self.ligand_kick_T_vector)
        if len(self.ligand_kick_T_vector) != 3:
            raise ValueError("ligand_kick_T_vector needs three entries")

    @classmethod
    def from_preset(cls, preset: str = "gentle", **overrides) -> "ProtocolConfig":
        return cls(preset=preset, **overrides)

    @property
    def aggressive(self) -> bool:
        return self.preset == "aggressive"

    @property
    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return list(range(self.conformations_per_pair if self.aggressive else 10))

    @property
    def transform_mode(self) -> str:
        if self.mode is not None:
            return self.mode
        return "ligand_whole_body" if self.aggressive else "standard"

    @property
    def relax_steps(self) -> int:
        return self.ligand_relax_steps if self.aggressive else self.n_relax_steps

    @property
    def relax_learning_rate(self) -> float:
        return self.learning_rate * (self.ligand_lr_multiplier if self.aggressive else 1.0)

    @property
    def ligand_gradient_scale(self) -> float:
        return self.ligand_grad_multiplier if self.aggressive else 1.0

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))


def read_config(path, **overrides) -> ProtocolConfig:
    """Parse ``key = value`` lines (``#`` comments) into a :class:`ProtocolConfig`.

    Values are Python literals; bare words are taken as strings. Keys must be
    :class:`ProtocolConfig` field names. ``overrides`` win over the file.
    """
    names = {f.name for f in fields(ProtocolConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, text = (s.strip() for s in line.split("=", 1))
            if key not in names:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = ast.literal_eval(text)
            except (ValueError, SyntaxError):
                values[key] = text
    values.update(overrides)
    return ProtocolConfig(**values)


TRACE_COLUMNS = ("step", "phase", "e_bond", "e_angle", "e_dihedral", "e_improper", "e_lj", "e_coulomb", "e_total", "e_ligand", "delta_e")
_ENERGY_FIELDS = TRACE_COLUMNS[2:9]


@dataclass
class EnergyTrace:
    """Per-step energies; row ``k`` is the state before optimizer step ``k``."""

    steps: list[int] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    energies: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, step: int, phase: str, breakdown: EnergyBreakdown, e_ligand: float, delta_e: float):
        self.steps.append(step)
        self.phases.append(phase)
        self.energies.append(tuple(getattr(breakdown, f) for f in _ENERGY_FIELDS) + (e_ligand, delta_e))

    def __len__(self):
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        if name == "step":
            return np.array(self.steps, dtype=np.int64)
        if name == "phase":
            return np.array(self.phases, dtype=object)
        k = TRACE_COLUMNS.index(name) - 2
        return np.array([e[k] for e in self.energies], dtype=float).reshape(-1)

    def rows(self) -> list[dict]:
        return [dict(zip(TRACE_COLUMNS, (s, p, *e))) for s, p, e in zip(self.steps, self.phases, self.energies)]

    def copy(self) -> "EnergyTrace":
        return EnergyTrace(list(self.steps), list(self.phases), list(self.energies))

    def extend(self, other: "EnergyTrace"):
        self.steps += other.steps
        self.phases += other.phases
        self.energies += other.energies

    @property
    def next_step(self) -> int:
        return self.steps[-1] + 1 if self.steps else 0


@dataclass
class RunRecord:
    seed: int
    trace: EnergyTrace
    coords: np.ndarray | None
    params: TransformParams | None
    status: str
    relaxed_coords: np.ndarray | None = None
    post_kick_energy: float = math.nan
    final_energy: float = math.nan
    flips: tuple[int, ...] = ()
    error: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")


@dataclass
class KickDraws:
    """Raw kick draws, one row per micro-group in ascending id order."""

    T: np.ndarray
    R: np.ndarray
    flip_u: np.ndarray


def _group_rng(seed: int, key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(key[0]), int(key[1])]))


def ligand_param_mask(plan: SegmentationPlan) -> TransformParams:
    """Boolean mask (as a :class:`TransformParams`) of parameter entries owned by the ligand."""
    mask = TransformParams.zeros(plan)
    lig = plan.ligand_mask()
    mask.atom_disp[lig[plan.movable_atoms]] = 1.0
    lig_micro = [g.id for g in plan.micro_groups if g.kind == "ligand_fragment"]
    mask.theta_R_micro[lig_micro] = 1.0
    mask.theta_T_micro[lig_micro] = 1.0
    mask.theta_A[[k for k, g in enumerate(plan.anchored) if g.kind == "ligand_fragment"]] = 1.0
    mask.theta_R_macro[plan.ligand_macro.id] = 1.0
    mask.theta_T_macro[plan.ligand_macro.id] = 1.0
    return mask


def draw_kick(plan: SegmentationPlan, cfg: ProtocolConfig, seed: int) -> KickDraws:
    """Uniform micro-group kick draws keyed by (seed, group kind, first atom id).

    Each group has its own stream: T (3 values), then R (3), then the flip
    uniform. The draws never depend on coordinates or on other groups.
    """
    n = len(plan.micro_groups)
    T = np.empty((n, 3))
    R = np.empty((n, 3))
    u = np.empty(n)
    for g in plan.micro_groups:
        rng = _group_rng(seed, plan.group_keys[g.id])
        T[g.id] = rng.uniform(-cfg.kick_T_range, cfg.kick_T_range, 3)
        R[g.id] = rng.uniform(-cfg.kick_R_range, cfg.kick_R_range, 3)
        u[g.id] = rng.random()
    return KickDraws(T, R, u)


def draw_ligand_kick(cfg: ProtocolConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Whole-ligand kick of the aggressive preset: ``(theta_R, theta_T)``."""
    rng = _group_rng(seed, LIGAND_MACRO_KEY)
    theta_r = rng.uniform(-cfg.ligand_kick_R_range, cfg.ligand_kick_R_range, 3)
    return theta_r, np.array(cfg.ligand_kick_T_vector, dtype=float)


def _rotate_about_axis(points, a, b, angle):
    k = (b - a) / np.linalg.norm(b - a)
    v = points - a
    c, s = math.cos(angle), math.sin(angle)
    return a + v * c + np.cross(k, v) * s + np.outer(v @ k, k) * (1 - c)


def _flip_clashes(group, flipped_xyz, coords, radius, ff=None) -> bool:
    """True if any flipped atom sits within ``radius`` of a non-excluded atom outside its group."""
    members = np.asarray(group.atoms)
    others = np.setdiff1d(np.arange(len(coords)), members)
    if len(others) == 0:
        return False
    tree = cKDTree(coords[others])
    for atom, hits in zip(members, tree.query_ball_point(flipped_xyz, radius)):
        for h in hits:
            other = int(others[h])
            if ff is None or not ff.is_excluded(int(atom), other):
                return True
    return False


def apply_kick(plan: SegmentationPlan, params: TransformParams, coords, cfg: ProtocolConfig, seed: int, cost: CostFunction | None = None, report: dict | None = None) -> TransformParams:
    """Return ``params`` plus a seeded energetic kick.

    Micro-group translations and rotations receive the uniform draws of
    :func:`draw_kick` (added to the incoming values). Each ring-flip eligible
    group whose flip uniform falls below ``ring_flip_probability`` gets
    ``pi`` added to its anchor angle, unless the flipped group would put an
    atom within ``clash_radius`` of a non-excluded atom. The flipped geometry
    is evaluated exactly through ``cost`` when given, else by rotating the
    group about its current anchor axis in ``coords``. Macro-groups are not
    kicked.
    """
    coords = np.asarray(coords, dtype=float)
    draws = draw_kick(plan, cfg, seed)
    out = params.copy()
    out.theta_T_micro += draws.T
    out.theta_R_micro += draws.R

    flipped, suppressed = [], []
    for k, g in enumerate(plan.anchored):
        if not g.ring_flip_eligible or not draws.flip_u[g.id] < cfg.ring_flip_probability:
            continue
        atoms = list(g.atoms)
        if cost is not None:
            trial = params.copy()
            trial.theta_A[k] += math.pi
            xyz = cost.coordinates(trial)[atoms]
        else:
            a, b = coords[g.anchor[0]], coords[g.anchor[1]]
            xyz = _rotate_about_axis(coords[atoms], a, b, math.pi)
        if _flip_clashes(g, xyz, coords, cfg.clash_radius, cost.ff if cost is not None else None):
            suppressed.append(g.id)
            continue
        out.theta_A[k] += math.pi
        flipped.append(g.id)
    if report is not None:
        report.update(draws=draws, flipped=tuple(flipped), suppressed=tuple(suppressed))
    return out


class _Stepper:
    """Evaluate-record-update loop shared by the relax, minimize and extend phases."""

    def __init__(self, cost: CostFunction, formation: FormationEnergy):
        self.cost = cost
        self.formation = formation

    def record(self, trace, step, phase, breakdown, coords):
        e_lig = self.formation.ligand_energy(coords)
        trace.append(step, phase, breakdown, e_lig, self.formation.delta_e(breakdown.e_total, e_lig))

    def run(self, params, n_steps, cfg, lr, phase, start_step, free=None, grad_scale=None):
        """Returns ``(params, trace, final EnergyBreakdown, final coords, error)``."""
        template = params
        x = params.flatten()
        opt = Adam(
            x.size,
            lr=lr,
            betas=cfg.adam_betas,
            eps=cfg.adam_eps,
            milestones=milestone_steps(cfg.lr_milestones, n_steps),
            gamma=cfg.lr_decay,
            free=free,
        )
        trace = EnergyTrace()
        try:
            for k in range(n_steps):
                p = TransformParams.unflatten(template, x)
                breakdown, grad, coords = self.cost(p)
                self.record(trace, start_step + k, phase, breakdown, coords)
                g = grad.flatten()
                if grad_scale is not None:
                    g = g * grad_scale
                opt.step(x, g)
            p = TransformParams.unflatten(template, x)
            if not p.is_finite():
                raise NonFiniteGradient("parameters became non-finite")
            final = self.cost.energy(p)
            return p, trace, final, self.cost.coordinates(p), ""
        except (NonFiniteGradient, NonFiniteEnergy, SingularPair) as exc:
            return None, trace, None, None, f"{type(exc).__name__}: {exc}"


def _context(system, plan, settings, cfg, cost=None, formation=None):
    settings = settings or NonbondedSettings()
    cost = cost or CostFunction(system, plan, settings, cfg.transform_mode)
    formation = formation or FormationEnergy(system, plan, settings, ff=cost.ff, coords0=cost.coords0)
    return cost, formation


@dataclass
class RelaxResult:
    params: TransformParams | None
    coords: np.ndarray | None
    trace: EnergyTrace
    energy: EnergyBreakdown | None
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.params is None


def relax_ligand(system: MolecularSystem, plan: SegmentationPlan, settings: NonbondedSettings | None, cfg: ProtocolConfig, cost=None, formation=None) -> RelaxResult:
    """Optimize only the ligand-owned parameters; protein coordinates stay bit-identical.

    Aggressive preset: the whole-ligand macro kick is applied first, then
    ``ligand_relax_steps`` steps at ``learning_rate * ligand_lr_multiplier``.
    """
    cost, formation = _context(system, plan, settings, cfg, cost, formation)
    params = TransformParams.zeros(plan)
    if cfg.aggressive:
        theta_r, theta_t = draw_ligand_kick(cfg, cfg.relax_seed)
        params.theta_R_macro[plan.ligand_macro.id] = theta_r
        params.theta_T_macro[plan.ligand_macro.id] = theta_t
    free = ligand_param_mask(plan).flatten() > 0
    p, trace, final, coords, err = _Stepper(cost, formation).run(params, cfg.relax_steps, cfg, cfg.relax_learning_rate, "relax", 0, free=free)
    return RelaxResult(p, coords, trace, final, err)


def minimize(
    system: MolecularSystem,
    plan: SegmentationPlan,
    params: TransformParams,
    settings: NonbondedSettings | None,
    cfg: ProtocolConfig,
    start_step: int = 0,
    n_steps: int | None = None,
    phase: str = "minimize",
    cost=None,
    formation=None,
):
    """Adam over every parameter for ``n_minimize_steps`` (or ``n_steps``).

    Returns ``(params, trace segment, final EnergyBreakdown, final coords,
    error)``; on failure the first, third and fourth are ``None`` and the
    trace holds the steps completed before the failure.
    """
    cost, formation = _context(system, plan, settings, cfg, cost, formation)
    scale = None
    if cfg.ligand_gradient_scale != 1.0:
        scale = np.where(ligand_param_mask(plan).flatten() > 0, cfg.ligand_gradient_scale, 1.0)
    steps = cfg.n_minimize_steps if n_steps is None else n_steps
    return _Stepper(cost, formation).run(params, steps, cfg, cfg.learning_rate, phase, start_step, grad_scale=scale)


def _run_seed(system, plan, settings, cfg, relaxed: RelaxResult, seed, cost=None, formation=None) -> RunRecord:
    cost, formation = _context(system, plan, settings, cfg, cost, formation)
    trace = relaxed.trace.copy()
    if relaxed.failed:
        return RunRecord(seed, trace, None, None, "failed", error=relaxed.error)
    report = {}
    kicked = apply_kick(plan, relaxed.params, relaxed.coords, cfg, seed, cost=cost, report=report)
    p, seg, final, coords, err = minimize(system, plan, kicked, settings, cfg, trace.next_step, cost=cost, formation=formation)
    trace.extend(seg)
    post_kick = seg.energies[0][_ENERGY_FIELDS.index("e_total")] if len(seg) else math.nan
    if p is None:
        return RunRecord(seed, trace, None, None, "failed", relaxed.coords, post_kick, flips=report["flipped"], error=err)
    return RunRecord(seed, trace, coords, p, "converged", relaxed.coords, post_kick, final.e_total, report["flipped"])


def _seed_worker(args):
    return _run_seed(*args)


def generate_conformations(
    system: MolecularSystem,
    plan: SegmentationPlan,
    settings: NonbondedSettings | None,
    cfg: ProtocolConfig,
    jobs: int = 1,
) -> list[RunRecord]:
    """Relax once, then kick and minimize once per seed; records follow the seed order.

    A failed seed yields a ``failed`` record and the batch continues. With
    ``extension_slope_threshold`` set (aggressive preset), records whose
    energy is still falling faster than the threshold are extended.
    """
    settings = settings or NonbondedSettings()
    cost, formation = _context(system, plan, settings, cfg)
    relaxed = relax_ligand(system, plan, settings, cfg, cost=cost, formation=formation)
    seeds = cfg.seed_list
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds), os.cpu_count() or 1)) as pool:
            records = list(pool.map(_seed_worker, [(system, plan, settings, cfg, relaxed, s) for s in seeds]))
    else:
        records = [_run_seed(system, plan, settings, cfg, relaxed, s, cost, formation) for s in seeds]
    if cfg.aggressive and cfg.extension_slope_threshold is not None:
        records = [
            extend_record(system, plan, r, settings, cfg, cost=cost, formation=formation) if needs_extension(r, cfg) else r
            for r in records
        ]
    return records


def needs_extension(record: RunRecord, cfg: ProtocolConfig) -> bool:
    """Energy slope over the last ``extension_window`` steps steeper than the threshold."""
    if record.status == "failed" or cfg.extension_slope_threshold is None:
        return False
    e = record.trace.column("e_total")[-cfg.extension_window :]
    if len(e) < 2:
        return False
    slope = np.polyfit(np.arange(len(e), dtype=float), e, 1)[0]
    return abs(slope) > cfg.extension_slope_threshold


def extend_record(system, plan, record: RunRecord, settings, cfg: ProtocolConfig, steps: int | None = None, cost=None, formation=None) -> RunRecord:
    """Continue minimizing a record for ``extension_steps`` more steps; status becomes ``extended``."""
    if record.status == "failed":
        return record
    steps = cfg.extension_steps if steps is None else steps
    trace = record.trace.copy()
    p, seg, final, coords, err = minimize(system, plan, record.params, settings, cfg, trace.next_step, n_steps=steps, phase="extend", cost=cost, formation=formation)
    trace.extend(seg)
    if p is None:
        return replace(record, trace=trace, coords=None, params=None, status="failed", final_energy=math.nan, error=err)
    return replace(record, trace=trace, coords=coords, params=p, status="extended", final_energy=final.e_total)
