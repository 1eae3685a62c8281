"""Formation-energy traces and the per-ligand screening feature vector.

``dE = E_complex - E_ligand_alone - E_protein_init``: the complex energy of
the current structure, minus the ligand evaluated on its own at the same
coordinates, minus the protein evaluated on its own at the starting
coordinates. The result is the protein-ligand interaction energy plus the
strain the protein picked up along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FailedRecord, LengthNotDivisible, ScoreCountMismatch, ShapeMismatch
from .ffenergy import EnergyModel, ForceField, NonbondedSettings, interaction_energy
from .molio import MolecularSystem, read_table
from .segmentation import SegmentationPlan

__all__ = [
    "FormationEnergy",
    "FeatureTrace",
    "FeatureVector",
    "delta_e_trace",
    "downsample_trace",
    "feature_columns",
    "mask_columns",
    "assemble_features",
    "fallback_scores",
    "read_score_table",
    "feature_rows",
]

DOWNSAMPLE_FACTOR = 100
DOWNSAMPLE_SCALE = 1000.0
DOWNSAMPLE_METHODS = ("stride", "mean")


class FormationEnergy:
    """Evaluates ``E_ligand_alone`` per frame and holds the constant ``E_protein_init``.

    Both sub-evaluations use the same fixed-fixed skipping as the complex
    cost, so the skipped constants cancel in ``dE``.
    """

    def __init__(self, system: MolecularSystem, plan: SegmentationPlan, settings: NonbondedSettings | None = None, ff: ForceField | None = None, coords0=None):
        self.settings = settings or NonbondedSettings()
        self.ff = ff or ForceField(system)
        ligand = plan.ligand_mask()
        active = plan.movable_mask()
        coords0 = system.positions if coords0 is None else coords0
        self.ligand_model = EnergyModel(self.ff, self.settings, atoms=ligand, active=active)
        protein_model = EnergyModel(self.ff, self.settings, atoms=~ligand, active=active)
        self.e_protein_init = protein_model.evaluate(np.asarray(coords0, dtype=float))[0].e_total

    def ligand_energy(self, coords) -> float:
        return self.ligand_model.evaluate(coords)[0].e_total

    def delta_e(self, e_complex: float, e_ligand: float) -> float:
        return e_complex - e_ligand - self.e_protein_init


@dataclass
class FeatureTrace:
    delta_e: np.ndarray
    e_protein_init: float
    seed: int | None = None

    def __len__(self):
        return len(self.delta_e)


def delta_e_trace(system, plan, record, settings=None, formation: FormationEnergy | None = None) -> FeatureTrace:
    """Per-step ``dE`` of a run record, recomputed from its recorded complex and ligand energies."""
    if record.status == "failed":
        raise FailedRecord(f"record for seed {record.seed} failed: {record.error}")
    formation = formation or FormationEnergy(system, plan, settings)
    e_total = record.trace.column("e_total")
    e_ligand = record.trace.column("e_ligand")
    return FeatureTrace(e_total - e_ligand - formation.e_protein_init, formation.e_protein_init, record.seed)


def downsample_trace(trace, factor: int = DOWNSAMPLE_FACTOR, scale: float = DOWNSAMPLE_SCALE, method: str = "stride") -> np.ndarray:
    """Reduce a trace by ``factor`` and divide by ``scale``.

    ``stride`` keeps the last value of each block (indices factor-1,
    2*factor-1, ...); ``mean`` averages each block.
    """
    values = np.asarray(trace.delta_e if isinstance(trace, FeatureTrace) else trace, dtype=float)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if len(values) % factor:
        raise LengthNotDivisible(f"trace length {len(values)} is not divisible by {factor}")
    if method == "stride":
        out = values[factor - 1 :: factor]
    elif method == "mean":
        out = values.reshape(-1, factor).mean(axis=1)
    else:
        raise ValueError(f"method must be one of {DOWNSAMPLE_METHODS}")
    return out / scale


def feature_columns(n_conformations: int, per_conformation: int = 22) -> list[str]:
    """Names of the ``per_conformation * n + n + 2`` feature columns, in output order."""
    cols = [f"de_c{c}_{k}" for c in range(1, n_conformations + 1) for k in range(1, per_conformation + 1)]
    cols += ["score_initial", "score_relaxed"]
    cols += [f"score_conf_{c}" for c in range(1, n_conformations + 1)]
    return cols


def mask_columns(n_conformations: int) -> list[str]:
    return [f"failed_conf_{c}" for c in range(1, n_conformations + 1)] + ["scores_fallback"]


@dataclass
class FeatureVector:
    ligand_id: str
    values: np.ndarray
    columns: list[str]
    failed: np.ndarray
    scores_fallback: bool = False
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"ligand_id": self.ligand_id}
        row.update(zip(self.columns, (float(v) for v in self.values)))
        row.update(zip(mask_columns(len(self.failed)), [bool(f) for f in self.failed] + [self.scores_fallback]))
        return row


def assemble_features(
    traces,
    scores=None,
    ligand_id: str = "",
    fallback=None,
    factor: int = DOWNSAMPLE_FACTOR,
    scale: float = DOWNSAMPLE_SCALE,
    method: str = "stride",
    per_conformation: int | None = None,
) -> FeatureVector:
    """Concatenate downsampled ``dE`` blocks and the docking-score block.

    ``traces``: one entry per conformation; ``None`` marks a failed record,
    whose block becomes NaN with its mask bit set. ``scores``: the ``n + 2``
    external scores (initial, relaxed, one per conformation). When it is
    ``None`` the ``fallback`` scores are used and flagged.
    """
    traces = list(traces)
    n = len(traces)
    blocks = [None if t is None else downsample_trace(t, factor, scale, method) for t in traces]
    lengths = {len(b) for b in blocks if b is not None}
    if per_conformation is None:
        if len(lengths) > 1:
            raise ShapeMismatch(f"conformation traces downsample to different lengths {sorted(lengths)}")
        per_conformation = lengths.pop() if lengths else 22
    elif lengths and lengths != {per_conformation}:
        raise ShapeMismatch(f"expected {per_conformation} features per conformation, got {sorted(lengths)}")

    used_fallback = scores is None
    block = fallback if used_fallback else scores
    if block is None:
        raise ScoreCountMismatch(f"no scores for ligand {ligand_id!r} and no fallback")
    block = np.asarray(block, dtype=float).ravel()
    if len(block) != n + 2:
        raise ScoreCountMismatch(f"ligand {ligand_id!r}: {len(block)} scores, expected {n + 2}")

    failed = np.array([b is None for b in blocks], dtype=bool)
    de = np.full((n, per_conformation), np.nan)
    for c, b in enumerate(blocks):
        if b is not None:
            de[c] = b
    values = np.concatenate([de.ravel(), block])
    return FeatureVector(ligand_id, values, feature_columns(n, per_conformation), failed, used_fallback)


def fallback_scores(system, plan, initial_coords, relaxed_coords, conformations, settings=None, ff=None) -> np.ndarray:
    """Protein-ligand interaction energies standing in for missing docking scores.

    ``conformations`` may contain ``None`` for failed records (scored NaN).
    """
    ff = ff or ForceField(system)
    ligand = plan.ligand_mask()
    out = []
    for coords in [initial_coords, relaxed_coords, *conformations]:
        if coords is None:
            out.append(math.nan)
        else:
            out.append(interaction_energy(ff, coords, ~ligand, ligand, settings))
    return np.array(out)


def read_score_table(path) -> dict[str, np.ndarray]:
    """``ligand_id -> scores`` from ``ligand_id,score_initial,score_relaxed,score_conf_1..n``."""
    header, rows = read_table(path, numeric=False)
    if not header or header[0] != "ligand_id":
        raise ScoreCountMismatch(f"{path}: first column must be ligand_id")
    expected = ["score_initial", "score_relaxed"] + [f"score_conf_{c}" for c in range(1, len(header) - 2)]
    if header[1:] != expected:
        raise ScoreCountMismatch(f"{path}: unexpected score columns {header[1:]}")
    table = {}
    for row in rows:
        try:
            table[row["ligand_id"]] = np.array([float(row[c]) for c in expected])
        except (KeyError, ValueError) as exc:
            raise ScoreCountMismatch(f"{path}: bad score row for {row.get('ligand_id')!r}") from exc
    return table


def feature_rows(vectors) -> tuple[list[str], list[dict]]:
    """Header and rows for a feature table; all vectors must share a column layout."""
    vectors = list(vectors)
    if not vectors:
        return ["ligand_id"], []
    cols = vectors[0].columns
    masks = mask_columns(len(vectors[0].failed))
    for v in vectors[1:]:
        if v.columns != cols:
            raise ShapeMismatch(f"ligand {v.ligand_id!r} has a different feature layout")
    return ["ligand_id", *cols, *masks], [v.as_row() for v in vectors]
