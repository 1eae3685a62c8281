"""Synthetic protein-ligand systems for tests, demos and capacity checks.

Geometry is schematic: residues sit on a serpentine lattice with sidechains
pointing up, bonds and angles take their equilibrium values from the initial
geometry, and proper dihedrals share one generic cosine term.
"""

from __future__ import annotations

import math

import numpy as np

from .ffenergy import dihedral_angles
from .molio import AtomAnnotations, MolecularSystem

__all__ = ["build_system", "peptide_complex", "ligand_only"]

# type id -> (mass, epsilon, sigma)
ATOM_TYPES = {
    1: (14.007, 0.20, 3.30),  # N
    2: (12.011, 0.10, 3.40),  # C
    3: (15.999, 0.12, 3.00),  # O
    4: (12.011, 0.09, 3.40),  # ligand C
    5: (15.999, 0.15, 3.00),  # ligand O
}


def _angle(a, b, c):
    u, v = a - b, c - b
    return math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v)))


def build_system(positions, type_ids, charges, bonds, molecule_ids=None, impropers=(), dihedral=(0.3, 3, 0.0)):
    """Assemble a :class:`MolecularSystem` from atoms and bonds.

    Angles and proper dihedrals are enumerated from the bond graph. Bond
    lengths, angles and impropers are at equilibrium in the given geometry;
    every proper dihedral uses ``dihedral = (K, n, d_radians)``.
    """
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    bonds = [tuple(sorted(b)) for b in bonds]
    nbr: dict[int, list[int]] = {i: [] for i in range(n)}
    for a, b in bonds:
        nbr[a].append(b)
        nbr[b].append(a)

    bond_rows, bond_coeffs = [], {}
    for k, (a, b) in enumerate(bonds, start=1):
        bond_coeffs[k] = (300.0, float(np.linalg.norm(pos[a] - pos[b])))
        bond_rows.append((k, a, b))

    angle_rows, angle_coeffs = [], {}
    for j in range(n):
        nb = sorted(nbr[j])
        for x in range(len(nb)):
            for y in range(x + 1, len(nb)):
                k = len(angle_rows) + 1
                angle_coeffs[k] = (50.0, _angle(pos[nb[x]], pos[j], pos[nb[y]]))
                angle_rows.append((k, nb[x], j, nb[y]))

    dih_rows = []
    for j, k in bonds:
        for i in sorted(nbr[j]):
            if i == k:
                continue
            for l in sorted(nbr[k]):
                if l in (j, i):
                    continue
                dih_rows.append((1, i, j, k, l))
    dihedral_coeffs = {1: [tuple(dihedral)]} if dih_rows else {}

    imp_rows, imp_coeffs = [], {}
    for quad in impropers:
        chi, _ = dihedral_angles(*(pos[[q]] for q in quad))
        k = len(imp_rows) + 1
        imp_coeffs[k] = (10.0, float(chi[0]))
        imp_rows.append((k, *quad))

    types = np.asarray(type_ids, dtype=np.int64)
    used = sorted(set(int(t) for t in types))
    return MolecularSystem(
        atom_ids=np.arange(1, n + 1, dtype=np.int64),
        molecule_ids=np.ones(n, dtype=np.int64) if molecule_ids is None else np.asarray(molecule_ids, dtype=np.int64),
        type_ids=types,
        charges=np.asarray(charges, dtype=float),
        positions=pos,
        masses={t: ATOM_TYPES[t][0] for t in used},
        pair_coeffs={t: (ATOM_TYPES[t][1], ATOM_TYPES[t][2], ATOM_TYPES[t][1] / 2, ATOM_TYPES[t][2]) for t in used},
        bond_coeffs=bond_coeffs,
        angle_coeffs=angle_coeffs,
        dihedral_coeffs=dihedral_coeffs,
        improper_coeffs=imp_coeffs,
        bonds=np.array(bond_rows, dtype=np.int64).reshape(-1, 3),
        angles=np.array(angle_rows, dtype=np.int64).reshape(-1, 4),
        dihedrals=np.array(dih_rows, dtype=np.int64).reshape(-1, 5),
        impropers=np.array(imp_rows, dtype=np.int64).reshape(-1, 5),
    )


def _lattice_path(n_res, row_len, rows_per_layer, step=3.6, row_gap=5.0, layer_gap=10.0):
    """Residue origins and (direction, step) to the next residue along a serpentine lattice."""
    origins, dirs = [], []
    p = np.zeros(3)
    x_dir, y_dir = 1.0, 1.0
    pos_in_row = row = 0
    for _ in range(n_res):
        origins.append(p.copy())
        if pos_in_row < row_len - 1:
            e, length = np.array([x_dir, 0.0, 0.0]), step
            pos_in_row += 1
        elif row < rows_per_layer - 1:
            e, length = np.array([0.0, y_dir, 0.0]), row_gap
            row += 1
            pos_in_row = 0
            x_dir = -x_dir
        else:
            e, length = np.array([0.0, 0.0, 1.0]), layer_gap
            row = pos_in_row = 0
            x_dir, y_dir = -x_dir, -y_dir
        dirs.append((e, length))
        p = p + e * length
    return origins, dirs


def peptide_complex(
    n_residues=3,
    residue_names=None,
    secondary=None,
    ligand="pair",
    ligand_offset=(0.0, 0.0, 11.0),
    row_len=30,
    rows_per_layer=20,
    seed=0,
):
    """A lattice peptide plus a small ligand above its middle residue.

    ``residue_names`` entries may be ``GLY`` (no sidechain), ``PHE`` (CB + six
    ring), or anything else (two-atom sidechain). ``ligand`` selects the
    ligand: ``"atom"`` (one atom), ``"pair"`` (rigid two-atom), ``"chain"``
    (ring + two rotatable bonds), or ``None``.

    Returns ``(system, annotations)``.
    """
    rng = np.random.default_rng(seed)
    names = list(residue_names) if residue_names is not None else ["ALA"] * n_residues
    ss = list(secondary) if secondary is not None else ["loop"] * n_residues
    origins, dirs = _lattice_path(len(names), row_len, rows_per_layer)

    pos, types, charges, bonds = [], [], [], []
    res_ids, res_names, backbone, ss_col = [], [], [], []
    impropers = []
    prev_c = None

    def add(xyz, t, q, resid, rname, bb, label):
        pos.append(np.asarray(xyz, dtype=float))
        types.append(t)
        charges.append(q)
        res_ids.append(resid)
        res_names.append(rname)
        backbone.append(bb)
        ss_col.append(label)
        return len(pos) - 1

    for r, (name, o, (e, length)) in enumerate(zip(names, origins, dirs), start=1):
        m = np.array([0.0, 0.0, 1.0]) if abs(e[2]) < 0.5 else np.array([1.0, 0.0, 0.0])
        nv = np.cross(e, m)
        label = ss[r - 1]
        n_at = add(o, 1, -0.3, r, name, True, label)
        ca = add(o + 1.2 * e + 0.6 * nv, 2, 0.1, r, name, True, label)
        c_at = add(o + 2.4 * e, 2, 0.5, r, name, True, label)
        o_at = add(pos[c_at] - 1.2 * nv + 0.4 * e, 3, -0.5, r, name, True, label)
        bonds += [(n_at, ca), (ca, c_at), (c_at, o_at)]
        if prev_c is not None:
            bonds.append((prev_c, n_at))
        prev_c = c_at
        if name == "GLY":
            continue
        cb = add(pos[ca] + 1.5 * m + 0.3 * nv, 2, 0.0, r, name, False, label)
        bonds.append((ca, cb))
        if name in ("PHE", "TYR", "TRP", "HIS"):
            centre = pos[cb] + 2.9 * m
            ring = []
            for k in range(6):
                a = math.pi + k * math.pi / 3
                ring.append(add(centre + 1.4 * (math.cos(a) * m + math.sin(a) * e), 2, 0.0, r, name, False, label))
            bonds.append((cb, ring[0]))
            bonds += [(ring[k], ring[(k + 1) % 6]) for k in range(6)]
        else:
            cg = add(pos[cb] + 1.5 * m - 0.4 * e, 2, float(rng.uniform(-0.1, 0.1)), r, name, False, label)
            bonds.append((cb, cg))

    n_protein = len(pos)
    lig_rot = []
    if ligand is not None:
        base = origins[len(names) // 2] if origins else np.zeros(3)
        mid = base + np.asarray(ligand_offset, dtype=float)
        lig = []

        def add_lig(xyz, t, q):
            k = add(xyz, t, q, len(names) + 1, "LIG", False, "none")
            lig.append(k)
            return k

        if ligand == "atom":
            add_lig(mid, 4, 0.0)
        elif ligand == "pair":
            a = add_lig(mid, 4, 0.2)
            b = add_lig(mid + [1.4, 0.0, 0.0], 5, -0.2)
            bonds.append((a, b))
        elif ligand == "chain":
            # six-ring, rotatable link to a two-atom linker, rotatable link to an O
            centre = mid + np.array([-2.8, 0.0, 0.0])
            ring = [add_lig(centre + 1.4 * np.array([math.cos(k * math.pi / 3), math.sin(k * math.pi / 3), 0.0]), 4, 0.0) for k in range(6)]
            bonds += [(ring[k], ring[(k + 1) % 6]) for k in range(6)]
            l1 = add_lig(pos[ring[0]] + np.array([1.5, 0.0, 0.3]), 4, 0.1)
            l2 = add_lig(pos[l1] + np.array([1.2, 0.8, 0.0]), 4, 0.1)
            ox = add_lig(pos[l2] + np.array([1.2, -0.8, 0.3]), 5, -0.2)
            bonds += [(ring[0], l1), (l1, l2), (l2, ox)]
            lig_rot = [(l1, ring[0]), (l2, ox)]
        else:
            raise ValueError(f"unknown ligand kind {ligand!r}")

    mol = [1] * n_protein + [2] * (len(pos) - n_protein)
    system = build_system(pos, types, charges, bonds, molecule_ids=mol, impropers=impropers)
    n = len(pos)
    ann = AtomAnnotations(
        residue_ids=np.array(res_ids, dtype=np.int64),
        residue_names=np.array(res_names, dtype=object),
        is_ligand=np.arange(n) >= n_protein,
        is_backbone=np.array(backbone, dtype=bool),
        secondary_structure=np.array(ss_col, dtype=object),
        rotatable_bonds=[(int(system.atom_ids[a]), int(system.atom_ids[b])) for a, b in lig_rot],
    )
    return system, ann


def ligand_only(kind="chain"):
    """Ligand without any protein (one dummy residue is not added)."""
    return peptide_complex(n_residues=0, residue_names=[], secondary=[], ligand=kind, ligand_offset=(0, 0, 0))
