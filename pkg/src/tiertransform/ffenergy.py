"""Molecular-mechanics energy with analytic coordinate gradients.

Terms: harmonic bonds, harmonic angles, cosine-series proper dihedrals,
harmonic impropers, Lennard-Jones and Coulomb with a smooth switch between
``cutoff_inner`` and ``cutoff_outer``. No periodic boundaries.

Nonbonded exclusions come from the bond graph: 1-2 and 1-3 pairs are dropped,
1-4 pairs use the 1-4 pair coefficients and full-strength Coulomb.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import NonFiniteEnergy, SingularPair
from .molio import MolecularSystem

__all__ = [
    "NonbondedSettings",
    "EnergyBreakdown",
    "ForceField",
    "EnergyModel",
    "NeighborList",
    "energy",
    "energy_and_gradient",
    "interaction_energy",
    "build_neighbor_list",
    "switching",
    "dihedral_angles",
]

SINGULAR_DISTANCE = 1e-6


@dataclass(frozen=True)
class NonbondedSettings:
    coulomb_constant: float = 332.0637
    cutoff_outer: float = 12.0
    cutoff_inner: float = 10.0
    skip_fixed_fixed: bool = True
    skin: float = 2.0

    def __post_init__(self):
        if not 0 < self.cutoff_inner < self.cutoff_outer:
            raise ValueError("need 0 < cutoff_inner < cutoff_outer")
        if self.skin < 0:
            raise ValueError("skin must be non-negative")


@dataclass(frozen=True)
class EnergyBreakdown:
    e_bond: float = 0.0
    e_angle: float = 0.0
    e_dihedral: float = 0.0
    e_improper: float = 0.0
    e_lj: float = 0.0
    e_coulomb: float = 0.0
    e_total: float = 0.0

    @classmethod
    def from_terms(cls, **terms):
        total = sum(terms.values())
        return cls(**{k: float(v) for k, v in terms.items()}, e_total=float(total))

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def e_nonbonded(self) -> float:
        return self.e_lj + self.e_coulomb


def switching(r, inner, outer):
    """Switch value S(r) and dS/dr; S=1 below ``inner``, 0 beyond ``outer``."""
    r = np.asarray(r, dtype=float)
    x = r * r
    ro2, ri2 = outer * outer, inner * inner
    denom = (ro2 - ri2) ** 3
    s = (ro2 - x) ** 2 * (ro2 + 2 * x - 3 * ri2) / denom
    ds = 12 * r * (ro2 - x) * (ri2 - x) / denom
    s = np.where(r <= inner, 1.0, np.where(r > outer, 0.0, s))
    ds = np.where((r <= inner) | (r > outer), 0.0, ds)
    return s, ds


def _scatter(grad, idx, vec):
    n = grad.shape[0]
    for c in range(3):
        grad[:, c] += np.bincount(idx, weights=vec[:, c], minlength=n)


def dihedral_angles(ri, rj, rk, rl):
    """Signed dihedral (radians, trans = pi) and its gradient w.r.t. the four points."""
    b1 = rj - ri
    b2 = rk - rj
    b3 = rl - rk
    m = np.cross(b1, b2)
    nv = np.cross(b2, b3)
    b2n = np.linalg.norm(b2, axis=1)
    x = np.einsum("ij,ij->i", m, nv)
    y = b2n * np.einsum("ij,ij->i", b1, nv)
    phi = np.arctan2(y, x)
    m2 = np.einsum("ij,ij->i", m, m)
    n2 = np.einsum("ij,ij->i", nv, nv)
    tiny = 1e-300
    gi = -(b2n / np.maximum(m2, tiny))[:, None] * m
    gl = (b2n / np.maximum(n2, tiny))[:, None] * nv
    b2sq = np.maximum(b2n * b2n, tiny)
    f1 = np.einsum("ij,ij->i", b1, b2) / b2sq
    f3 = np.einsum("ij,ij->i", b3, b2) / b2sq
    gj = -(f1 + 1.0)[:, None] * gi + f3[:, None] * gl
    gk = f1[:, None] * gi - (f3 + 1.0)[:, None] * gl
    return phi, (gi, gj, gk, gl)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _pair_keys(pairs, n):
    i = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    j = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    return i * n + j


def _in_sorted(keys, table):
    if len(table) == 0 or len(keys) == 0:
        return np.zeros(len(keys), dtype=bool)
    pos = np.searchsorted(table, keys)
    pos = np.minimum(pos, len(table) - 1)
    return table[pos] == keys


class ForceField:
    """Per-term parameter arrays and exclusion tables compiled from a system."""

    def __init__(self, system: MolecularSystem):
        self.system = system
        n = system.atom_count
        self.n_atoms = n
        types = system.type_ids
        pc = system.pair_coeffs
        self.eps = np.array([pc[int(t)][0] for t in types])
        self.sigma = np.array([pc[int(t)][1] for t in types])
        self.eps14 = np.array([pc[int(t)][2] for t in types])
        self.sigma14 = np.array([pc[int(t)][3] for t in types])
        self.charges = np.asarray(system.charges, dtype=float)

        b = system.bonds
        self.bond_idx = b[:, 1:3]
        self.bond_k = np.array([system.bond_coeffs[int(c)][0] for c in b[:, 0]])
        self.bond_r0 = np.array([system.bond_coeffs[int(c)][1] for c in b[:, 0]])

        a = system.angles
        self.angle_idx = a[:, 1:4]
        self.angle_k = np.array([system.angle_coeffs[int(c)][0] for c in a[:, 0]])
        self.angle_t0 = np.array([system.angle_coeffs[int(c)][1] for c in a[:, 0]])

        # one row per cosine term; multi-term dihedrals repeat their atoms
        rows, ks, ns, ds = [], [], [], []
        for row in system.dihedrals:
            for k, mult, d in system.dihedral_coeffs[int(row[0])]:
                rows.append(row[1:5])
                ks.append(k)
                ns.append(mult)
                ds.append(d)
        self.dihedral_idx = np.array(rows, dtype=np.int64).reshape(-1, 4)
        self.dihedral_k = np.array(ks, dtype=float)
        self.dihedral_n = np.array(ns, dtype=float)
        self.dihedral_d = np.array(ds, dtype=float)

        im = system.impropers
        self.improper_idx = im[:, 1:5]
        self.improper_k = np.array([system.improper_coeffs[int(c)][0] for c in im[:, 0]])
        self.improper_chi0 = np.array([system.improper_coeffs[int(c)][1] for c in im[:, 0]])

        self.excluded_keys, self.onefour_keys = self._exclusions()

    def _exclusions(self):
        n = self.n_atoms
        if len(self.bond_idx) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        i, j = self.bond_idx[:, 0], self.bond_idx[:, 1]
        adj = sparse.coo_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
        adj.data[:] = 1.0
        a2 = adj @ adj
        a3 = a2 @ adj

        def upper_keys(m):
            m = sparse.triu(m, k=1).tocoo()
            return np.unique(m.row.astype(np.int64) * n + m.col.astype(np.int64))

        near = upper_keys(adj + a2)
        third = upper_keys(a3)
        third = third[~_in_sorted(third, near)]
        return near, third

    def is_excluded(self, i, j):
        return _in_sorted(_pair_keys(np.column_stack([i, j]), self.n_atoms), self.excluded_keys)


class NeighborList:
    """Verlet pair list over ``cutoff_outer + skin`` with excluded pairs removed.

    ``atoms`` limits which atoms take part; with ``active`` given, only pairs
    touching at least one active atom are kept. Pairs are stored sorted,
    ``i < j``, so iteration order is deterministic.
    """

    def __init__(self, ff: ForceField, settings: NonbondedSettings, atoms=None, active=None, skin=None):
        self.ff = ff
        self.settings = settings
        self.skin = settings.skin if skin is None else skin
        n = ff.n_atoms
        self.atoms = np.arange(n) if atoms is None else np.flatnonzero(atoms) if np.asarray(atoms).dtype == bool else np.asarray(atoms)
        if active is None:
            self.active = None
        else:
            act = np.zeros(n, dtype=bool)
            act[active if np.asarray(active).dtype != bool else np.flatnonzero(active)] = True
            self.active = act
        self.pairs = np.zeros((0, 2), dtype=np.int64)
        self.reference = None
        self.builds = 0

    @property
    def radius(self):
        return self.settings.cutoff_outer + self.skin

    def build(self, coords):
        coords = np.asarray(coords, dtype=float)
        pts = coords[self.atoms]
        n = self.ff.n_atoms
        if len(self.atoms) < 2:
            pairs = np.zeros((0, 2), dtype=np.int64)
        elif self.active is None:
            local = cKDTree(pts).query_pairs(self.radius, output_type="ndarray")
            pairs = self.atoms[local]
        else:
            act_local = np.flatnonzero(self.active[self.atoms])
            if len(act_local) == 0:
                pairs = np.zeros((0, 2), dtype=np.int64)
            else:
                tree_all = cKDTree(pts)
                tree_act = cKDTree(pts[act_local])
                sdm = tree_act.sparse_distance_matrix(tree_all, self.radius, output_type="ndarray")
                ii = self.atoms[act_local[sdm["i"]]]
                jj = self.atoms[sdm["j"]]
                lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
                keep = lo != hi
                keys = np.unique(lo[keep].astype(np.int64) * n + hi[keep])
                pairs = np.column_stack([keys // n, keys % n])
        if len(pairs):
            keys = _pair_keys(pairs, n)
            keys = np.unique(keys[~_in_sorted(keys, self.ff.excluded_keys)])
            pairs = np.column_stack([keys // n, keys % n])
        self.pairs = pairs.astype(np.int64).reshape(-1, 2)
        self.reference = coords[self.atoms].copy()
        self.builds += 1
        return self.pairs

    def needs_rebuild(self, coords) -> bool:
        if self.reference is None:
            return True
        disp = np.asarray(coords)[self.atoms] - self.reference
        if len(disp) == 0:
            return False
        return float(np.sqrt(np.max(np.einsum("ij,ij->i", disp, disp)))) >= 0.5 * self.skin

    def update(self, coords):
        if self.needs_rebuild(coords):
            self.build(coords)
        return self.pairs


def build_neighbor_list(system_or_ff, coords, settings: NonbondedSettings, skin=2.0, atoms=None, active=None):
    ff = system_or_ff if isinstance(system_or_ff, ForceField) else ForceField(system_or_ff)
    nl = NeighborList(ff, settings, atoms=atoms, active=active, skin=skin)
    nl.build(coords)
    return nl


def _mask_terms(idx, keep_atoms, active):
    if len(idx) == 0:
        return np.zeros(0, dtype=bool)
    sel = np.all(keep_atoms[idx], axis=1)
    if active is not None:
        sel &= np.any(active[idx], axis=1)
    return sel


class EnergyModel:
    """Energy/gradient evaluator for a fixed subset of atoms and terms.

    ``atoms``: boolean mask of atoms that exist for this evaluation (terms
    touching other atoms are dropped). ``active``: when given and
    ``settings.skip_fixed_fixed`` is set, terms touching no active atom are
    skipped as constants.
    """

    def __init__(self, system_or_ff, settings: NonbondedSettings | None = None, atoms=None, active=None, use_neighbor_list=True):
        self.ff = system_or_ff if isinstance(system_or_ff, ForceField) else ForceField(system_or_ff)
        self.settings = settings or NonbondedSettings()
        n = self.ff.n_atoms
        keep = np.ones(n, dtype=bool) if atoms is None else np.asarray(atoms, dtype=bool).copy()
        act = None
        if active is not None and self.settings.skip_fixed_fixed:
            act = np.asarray(active, dtype=bool)
        self.atoms = keep
        self.active = act
        ff = self.ff
        sb = _mask_terms(ff.bond_idx, keep, act)
        self.bond = (ff.bond_idx[sb], ff.bond_k[sb], ff.bond_r0[sb])
        sa = _mask_terms(ff.angle_idx, keep, act)
        self.angle = (ff.angle_idx[sa], ff.angle_k[sa], ff.angle_t0[sa])
        sd = _mask_terms(ff.dihedral_idx, keep, act)
        self.dihedral = (ff.dihedral_idx[sd], ff.dihedral_k[sd], ff.dihedral_n[sd], ff.dihedral_d[sd])
        si = _mask_terms(ff.improper_idx, keep, act)
        self.improper = (ff.improper_idx[si], ff.improper_k[si], ff.improper_chi0[si])
        self.use_neighbor_list = use_neighbor_list
        self.nlist = NeighborList(ff, self.settings, atoms=keep, active=act) if use_neighbor_list else None

    def pairs(self, coords):
        if self.nlist is not None:
            return self.nlist.update(coords)
        return all_pairs(self.ff, self.atoms, self.active)

    def evaluate(self, coords, grad=False, pairs=None):
        """Return ``(EnergyBreakdown, gradient or None)``; gradient is N x 3."""
        coords = np.asarray(coords, dtype=float)
        g = np.zeros_like(coords) if grad else None
        e_bond = self._bonds(coords, g)
        e_angle = self._angles(coords, g)
        e_dih = self._dihedrals(coords, g)
        e_imp = self._impropers(coords, g)
        if pairs is None:
            pairs = self.pairs(coords)
        e_lj, e_coul = pair_energy(self.ff, self.settings, coords, pairs, g)
        out = EnergyBreakdown.from_terms(
            e_bond=e_bond, e_angle=e_angle, e_dihedral=e_dih, e_improper=e_imp, e_lj=e_lj, e_coulomb=e_coul
        )
        if not np.isfinite(out.e_total):
            raise NonFiniteEnergy(f"energy is not finite: {out}")
        return out, g

    def _bonds(self, x, g):
        idx, k, r0 = self.bond
        if len(idx) == 0:
            return 0.0
        d = x[idx[:, 0]] - x[idx[:, 1]]
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        dr = r - r0
        if g is not None:
            f = (2 * k * dr / np.maximum(r, 1e-300))[:, None] * d
            _scatter(g, idx[:, 0], f)
            _scatter(g, idx[:, 1], -f)
        return float(np.sum(k * dr * dr))

    def _angles(self, x, g):
        idx, k, t0 = self.angle
        if len(idx) == 0:
            return 0.0
        u = x[idx[:, 0]] - x[idx[:, 1]]
        v = x[idx[:, 2]] - x[idx[:, 1]]
        cr = np.cross(u, v)
        sn = np.linalg.norm(cr, axis=1)
        cs = np.einsum("ij,ij->i", u, v)
        theta = np.arctan2(sn, cs)
        dt = theta - t0
        if g is not None:
            lu = np.linalg.norm(u, axis=1)
            lv = np.linalg.norm(v, axis=1)
            cos_t = np.cos(theta)
            sin_t = np.maximum(np.sin(theta), 1e-12)
            pref = 2 * k * dt
            # d theta / du = (cos u_hat - v_hat) / (|u| sin)
            uh = u / lu[:, None]
            vh = v / lv[:, None]
            gu = (cos_t[:, None] * uh - vh) / (lu * sin_t)[:, None]
            gv = (cos_t[:, None] * vh - uh) / (lv * sin_t)[:, None]
            gu *= pref[:, None]
            gv *= pref[:, None]
            _scatter(g, idx[:, 0], gu)
            _scatter(g, idx[:, 2], gv)
            _scatter(g, idx[:, 1], -gu - gv)
        return float(np.sum(k * dt * dt))

    def _dihedrals(self, x, g):
        idx, k, n, d = self.dihedral
        if len(idx) == 0:
            return 0.0
        phi, grads = dihedral_angles(x[idx[:, 0]], x[idx[:, 1]], x[idx[:, 2]], x[idx[:, 3]])
        arg = n * phi - d
        if g is not None:
            dedphi = -k * n * np.sin(arg)
            for c in range(4):
                _scatter(g, idx[:, c], dedphi[:, None] * grads[c])
        return float(np.sum(k * (1.0 + np.cos(arg))))

    def _impropers(self, x, g):
        idx, k, chi0 = self.improper
        if len(idx) == 0:
            return 0.0
        chi, grads = dihedral_angles(x[idx[:, 0]], x[idx[:, 1]], x[idx[:, 2]], x[idx[:, 3]])
        dc = _wrap(chi - chi0)
        if g is not None:
            dedchi = 2 * k * dc
            for c in range(4):
                _scatter(g, idx[:, c], dedchi[:, None] * grads[c])
        return float(np.sum(k * dc * dc))


def all_pairs(ff: ForceField, atoms=None, active=None):
    """Every non-excluded pair (no distance cut), for small systems and oracles."""
    n = ff.n_atoms
    sel = np.arange(n) if atoms is None else np.flatnonzero(atoms)
    i, j = np.triu_indices(len(sel), k=1)
    pairs = np.column_stack([sel[i], sel[j]])
    if active is not None:
        pairs = pairs[active[pairs[:, 0]] | active[pairs[:, 1]]]
    keys = _pair_keys(pairs, n)
    return pairs[~_in_sorted(keys, ff.excluded_keys)]


def pair_energy(ff: ForceField, settings: NonbondedSettings, coords, pairs, g=None):
    """Switched LJ and Coulomb sums over ``pairs``; accumulates into ``g`` if given."""
    if len(pairs) == 0:
        return 0.0, 0.0
    i, j = pairs[:, 0], pairs[:, 1]
    d = coords[i] - coords[j]
    r2 = np.einsum("ij,ij->i", d, d)
    ro = settings.cutoff_outer
    near = r2 <= ro * ro
    if not np.all(near):
        i, j, d, r2 = i[near], j[near], d[near], r2[near]
        if len(i) == 0:
            return 0.0, 0.0
    r = np.sqrt(r2)
    if np.any(r < SINGULAR_DISTANCE):
        k = int(np.argmin(r))
        raise SingularPair(f"atoms {i[k]} and {j[k]} are {r[k]:.3g} A apart")
    onefour = _in_sorted(_pair_keys(np.column_stack([i, j]), ff.n_atoms), ff.onefour_keys)
    eps_i = np.where(onefour, ff.eps14[i], ff.eps[i])
    eps_j = np.where(onefour, ff.eps14[j], ff.eps[j])
    sig_i = np.where(onefour, ff.sigma14[i], ff.sigma[i])
    sig_j = np.where(onefour, ff.sigma14[j], ff.sigma[j])
    eps = np.sqrt(eps_i * eps_j)
    sig = 0.5 * (sig_i + sig_j)
    sr6 = (sig * sig / r2) ** 3
    sr12 = sr6 * sr6
    lj = 4 * eps * (sr12 - sr6)
    coul = settings.coulomb_constant * ff.charges[i] * ff.charges[j] / r
    s, ds = switching(r, settings.cutoff_inner, ro)
    e_lj = float(np.sum(lj * s))
    e_coul = float(np.sum(coul * s))
    if g is not None:
        dlj = 4 * eps * (-12 * sr12 + 6 * sr6) / r
        dcoul = -coul / r
        dedr = (dlj + dcoul) * s + (lj + coul) * ds
        f = (dedr / r)[:, None] * d
        _scatter(g, i, f)
        _scatter(g, j, -f)
    return e_lj, e_coul


def energy(system: MolecularSystem, coords, settings: NonbondedSettings | None = None, movable=None, use_neighbor_list=True):
    """Total energy and per-term breakdown of ``system`` at ``coords``.

    ``movable`` (boolean mask) enables fixed-fixed skipping when
    ``settings.skip_fixed_fixed`` is set; without it every term is evaluated.
    """
    model = EnergyModel(system, settings, active=movable, use_neighbor_list=use_neighbor_list)
    return model.evaluate(coords)[0]


def energy_and_gradient(system, coords, settings=None, movable=None, use_neighbor_list=True):
    model = EnergyModel(system, settings, active=movable, use_neighbor_list=use_neighbor_list)
    return model.evaluate(coords, grad=True)


def interaction_energy(system_or_ff, coords, set_a, set_b, settings: NonbondedSettings | None = None) -> float:
    """LJ + Coulomb cross terms between two disjoint atom sets."""
    settings = settings or NonbondedSettings()
    ff = system_or_ff if isinstance(system_or_ff, ForceField) else ForceField(system_or_ff)
    coords = np.asarray(coords, dtype=float)
    a = np.asarray(set_a)
    b = np.asarray(set_b)
    if a.dtype == bool:
        a = np.flatnonzero(a)
    if b.dtype == bool:
        b = np.flatnonzero(b)
    if np.intersect1d(a, b).size:
        raise ValueError("atom sets must be disjoint")
    if len(a) == 0 or len(b) == 0:
        return 0.0
    sdm = cKDTree(coords[a]).sparse_distance_matrix(cKDTree(coords[b]), settings.cutoff_outer, output_type="ndarray")
    pairs = np.column_stack([a[sdm["i"]], b[sdm["j"]]]).astype(np.int64)
    if len(pairs):
        keys = _pair_keys(pairs, ff.n_atoms)
        order = np.argsort(keys, kind="stable")
        pairs = pairs[order][~_in_sorted(keys[order], ff.excluded_keys)]
    e_lj, e_coul = pair_energy(ff, settings, coords, pairs)
    return e_lj + e_coul
