"""Structural and screening analytics: superposition, RMSD, backbone PCA, NEF, AUC-ROC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import CountMismatch, DegenerateGeometry, NoActives, RankDeficient, ShapeMismatch, SingleClass

__all__ = [
    "AlignmentResult",
    "PcaModel",
    "kabsch_align",
    "rmsd",
    "ligand_rmsd",
    "select_best_conformations",
    "pca_fit",
    "pca_transform",
    "nef",
    "auc_roc",
]


@dataclass
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float

    def apply(self, coords) -> np.ndarray:
        """Move ``coords`` (mobile frame) onto the reference frame."""
        return np.asarray(coords, dtype=float) @ self.rotation.T + self.translation


def rmsd(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise CountMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if len(a) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def kabsch_align(reference, mobile, subset=None) -> AlignmentResult:
    """Least-squares proper rotation + translation taking ``mobile`` onto ``reference``.

    The fit and the reported rmsd use the ``subset`` rows (all rows by default).
    """
    ref = np.asarray(reference, dtype=float)
    mob = np.asarray(mobile, dtype=float)
    if ref.shape != mob.shape or ref.ndim != 2 or ref.shape[1] != 3:
        raise CountMismatch(f"reference {ref.shape} and mobile {mob.shape} must both be M x 3")
    if subset is not None:
        ref = ref[np.asarray(subset)]
        mob = mob[np.asarray(subset)]
    if len(ref) < 3:
        raise DegenerateGeometry("alignment needs at least 3 points")
    c_ref = ref.mean(axis=0)
    c_mob = mob.mean(axis=0)
    p = mob - c_mob
    q = ref - c_ref
    for pts in (p, q):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] <= 1e-8 * max(sv[0], 1.0):
            raise DegenerateGeometry("subset points are collinear or coincident")
    h = p.T @ q
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = c_ref - rot @ c_mob
    return AlignmentResult(rot, trans, rmsd(p @ rot.T, q))


def ligand_rmsd(reference_ligand, candidate_ligand, mapping=None) -> float:
    """Plain RMSD without refitting; ``mapping[k]`` is the candidate row matched to reference row ``k``."""
    ref = np.asarray(reference_ligand, dtype=float)
    cand = np.asarray(candidate_ligand, dtype=float)
    if ref.shape != cand.shape:
        raise CountMismatch(f"reference has {len(ref)} atoms, candidate {len(cand)}")
    if mapping is not None:
        mapping = np.asarray(mapping, dtype=np.int64)
        if sorted(mapping.tolist()) != list(range(len(ref))):
            raise CountMismatch("mapping is not a bijection onto the candidate atoms")
        cand = cand[mapping]
    return rmsd(ref, cand)


def select_best_conformations(records, scores, k: int = 3):
    """The ``k`` records with the lowest scores; equal scores keep the input (seed) order."""
    records = list(records)
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(records):
        raise CountMismatch(f"{len(records)} records but {len(scores)} scores")
    if k > len(records):
        raise ValueError(f"k={k} exceeds the {len(records)} records")
    order = np.argsort(scores, kind="stable")[:k]
    return [records[i] for i in order]


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (2, d), rows orthonormal
    explained_variance: np.ndarray


def _fix_sign(v):
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def pca_fit(data, n_components: int = 2) -> PcaModel:
    """Top principal axes of mean-centred rows (covariance eigendecomposition).

    Each component's largest-magnitude coefficient is made positive. When
    fewer than ``n_components`` directions carry variance, the missing ones
    are taken from the eigenvectors of the null space (variance 0) and a
    :class:`RankDeficient` warning is issued.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ShapeMismatch("PCA input must be rows of equal length")
    if len(x) < 3:
        raise ShapeMismatch("PCA needs at least 3 rows")
    if x.shape[1] < n_components:
        raise ShapeMismatch(f"rows have {x.shape[1]} features, need at least {n_components}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(-w, kind="stable")[:n_components]
    var = np.clip(w[order], 0.0, None)
    tol = max(float(w.max()), 0.0) * 1e-12 * cov.shape[0]
    if np.sum(var > tol) < n_components:
        warnings.warn(f"only {int(np.sum(var > tol))} directions carry variance", RankDeficient, stacklevel=2)
        var = np.where(var > tol, var, 0.0)
    comps = np.array([_fix_sign(v[:, i]) for i in order])
    return PcaModel(mean, comps, var)


def pca_transform(model: PcaModel, rows) -> np.ndarray:
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != len(model.mean):
        raise ShapeMismatch(f"rows have {x.shape[1]} features, model expects {len(model.mean)}")
    return (x - model.mean) @ model.components.T


def _check_labels(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise CountMismatch(f"{s.size} scores but {y.size} labels")
    if len(s) == 0:
        raise CountMismatch("empty score table")
    return s, y


def nef(scores, labels, chi: float | None = None) -> float:
    """Normalized enrichment factor ``a_s / min(ceil(chi m), a)``.

    Ligands are ranked by descending score (stable, so ties keep input
    order); ``a_s`` counts actives in the top ``ceil(chi m)``. ``chi``
    defaults to the active ratio ``a / m``.
    """
    s, y = _check_labels(scores, labels)
    m = len(s)
    a = int(y.sum())
    if a == 0:
        raise NoActives("no active ligands in the label set")
    if chi is None:
        chi = a / m
    if not 0.0 < chi <= 1.0:
        raise ValueError("chi must be in (0, 1]")
    top = max(1, math.ceil(chi * m - 1e-9))
    order = np.argsort(-s, kind="stable")
    a_s = int(y[order[:top]].sum())
    return a_s / min(top, a)


def auc_roc(scores, labels) -> float:
    """Probability an active outscores a decoy, ties counting one half (Mann-Whitney)."""
    s, y = _check_labels(scores, labels)
    pos = s[y]
    neg = s[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("both actives and decoys are required")
    ranks = rankdata(s)  # midranks handle ties
    u = ranks[y].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))
