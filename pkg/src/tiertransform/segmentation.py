"""Two-level micro/macro segmentation of a protein-ligand pocket.

Only movable micro-groups are kept in the plan; atoms of groups with no atom
inside the pocket sphere are fixed. All atom references are 0-based indices
into the system's atom list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyMovableSet, LigandAbsent
from .molio import AtomAnnotations, MolecularSystem

__all__ = [
    "SegmentationConfig",
    "MicroGroup",
    "MacroGroup",
    "SegmentationPlan",
    "build_segmentation",
    "RING_FLIP_RESIDUES",
]

MICRO_KINDS = ("protein_backbone", "protein_sidechain", "ligand_fragment")
MACRO_KINDS = ("protein_loop", "ligand")

# CHARMM/AMBER histidine tautomer names included
RING_FLIP_RESIDUES = frozenset({"PHE", "HIS", "TRP", "TYR", "HSD", "HSE", "HSP", "HID", "HIE", "HIP"})


@dataclass(frozen=True)
class SegmentationConfig:
    r_centre: tuple[float, float, float]
    r_cutoff: float = 20.0

    def __post_init__(self):
        if not self.r_cutoff > 0:
            raise ValueError("r_cutoff must be positive")
        object.__setattr__(self, "r_centre", tuple(float(v) for v in self.r_centre))


@dataclass(frozen=True)
class MicroGroup:
    id: int
    atoms: tuple[int, ...]
    kind: str
    # (axis atom a, axis atom b); rotation about a->b
    anchor: tuple[int, int] | None = None
    ring_flip_eligible: bool = False
    residue_id: int | None = None

    @property
    def first_atom(self) -> int:
        return self.atoms[0]


@dataclass(frozen=True)
class MacroGroup:
    id: int
    micro_ids: tuple[int, ...]
    kind: str


@dataclass
class SegmentationPlan:
    movable_atoms: np.ndarray
    fixed_atoms: np.ndarray
    micro_groups: list[MicroGroup]
    macro_groups: list[MacroGroup]
    config: SegmentationConfig
    atom_count: int
    ligand_atoms: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # stable per-group keys (kind code, first atom file id) used to seed kick draws
    group_keys: list[tuple[int, int]] = field(default_factory=list)

    @property
    def anchored(self) -> list[MicroGroup]:
        return [g for g in self.micro_groups if g.anchor is not None]

    @property
    def ligand_macro(self) -> MacroGroup:
        for m in self.macro_groups:
            if m.kind == "ligand":
                return m
        raise LigandAbsent("plan has no ligand macro-group")

    def movable_mask(self) -> np.ndarray:
        mask = np.zeros(self.atom_count, dtype=bool)
        mask[self.movable_atoms] = True
        return mask

    def ligand_mask(self) -> np.ndarray:
        mask = np.zeros(self.atom_count, dtype=bool)
        mask[self.ligand_atoms] = True
        return mask

    def summary(self) -> dict:
        kinds = {k: 0 for k in MICRO_KINDS}
        for g in self.micro_groups:
            kinds[g.kind] += 1
        return {
            "atoms": self.atom_count,
            "movable_atoms": int(len(self.movable_atoms)),
            "fixed_atoms": int(len(self.fixed_atoms)),
            "micro_groups": len(self.micro_groups),
            "micro_groups_by_kind": kinds,
            "anchored_micro_groups": len(self.anchored),
            "ring_flip_eligible": sum(g.ring_flip_eligible for g in self.micro_groups),
            "macro_groups": len(self.macro_groups),
            "loop_macro_groups": sum(m.kind == "protein_loop" for m in self.macro_groups),
            "r_centre": list(self.config.r_centre),
            "r_cutoff": self.config.r_cutoff,
        }


def _components(nodes: np.ndarray, edges: list[tuple[int, int]]) -> list[list[int]]:
    """Connected components of the subgraph on ``nodes`` (global indices)."""
    local = {int(a): k for k, a in enumerate(nodes)}
    if len(edges):
        e = np.array([(local[a], local[b]) for a, b in edges])
        adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(len(nodes), len(nodes)))
    else:
        adj = coo_matrix((len(nodes), len(nodes)))
    _, labels = connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for k, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(int(nodes[k]))
    return list(comps.values())


def _has_ring(atoms: set[int], bonds: set[tuple[int, int]]) -> bool:
    inner = [(a, b) for a, b in bonds if a in atoms and b in atoms]
    if not inner:
        return False
    comps = _components(np.array(sorted(atoms)), inner)
    # a connected graph with at least as many edges as nodes contains a cycle
    return len(inner) > len(atoms) - len(comps)


def _ligand_fragments(system, ann, ligand, bonds):
    lig_set = set(int(i) for i in ligand)
    rot = []
    for a_id, b_id in ann.rotatable_bonds:
        a, b = system.index_of(a_id), system.index_of(b_id)
        if a in lig_set and b in lig_set:
            rot.append((a, b))
    if ann.ligand_fragment_map is not None and np.all(ann.ligand_fragment_map[ligand] >= 0):
        by_id: dict[int, list[int]] = {}
        for i in ligand:
            by_id.setdefault(int(ann.ligand_fragment_map[i]), []).append(int(i))
        frags = list(by_id.values())
    else:
        rot_keys = {(min(a, b), max(a, b)) for a, b in rot}
        inner = [(a, b) for a, b in bonds if a in lig_set and b in lig_set and (a, b) not in rot_keys]
        frags = _components(ligand, inner)
    return [sorted(f) for f in frags], rot


def build_segmentation(system: MolecularSystem, ann: AtomAnnotations, cfg: SegmentationConfig) -> SegmentationPlan:
    n = system.atom_count
    ligand = np.flatnonzero(ann.is_ligand)
    if len(ligand) == 0:
        raise LigandAbsent("no atom is annotated as ligand")
    bonds = system.bond_pairs()
    neighbours: dict[int, list[int]] = {}
    for a, b in bonds:
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)

    # (atoms, kind, anchor, ring_flip, residue_id)
    groups: list[tuple[list[int], str, tuple[int, int] | None, bool, int | None]] = []

    protein = np.flatnonzero(~ann.is_ligand)
    # residues keyed by (molecule id, residue id) in first-appearance order
    residues: dict[tuple[int, int], list[int]] = {}
    for i in protein:
        residues.setdefault((int(system.molecule_ids[i]), int(ann.residue_ids[i])), []).append(int(i))
    residue_of_group: list[tuple[int, int] | None] = []
    for key, atoms in residues.items():
        bb = [i for i in atoms if ann.is_backbone[i]]
        sc = [i for i in atoms if not ann.is_backbone[i]]
        if bb:
            groups.append((bb, "protein_backbone", None, False, key[1]))
            residue_of_group.append(key)
        if sc:
            sc_set = set(sc)
            links = sorted((a, b) for a in bb for b in neighbours.get(a, ()) if b in sc_set)
            anchor = links[0] if len(links) == 1 else None
            flip = anchor is not None and str(ann.residue_names[sc[0]]) in RING_FLIP_RESIDUES
            groups.append((sc, "protein_sidechain", anchor, flip, key[1]))
            residue_of_group.append(key)

    frags, rot = _ligand_fragments(system, ann, ligand, bonds)
    frag_of = {}
    for f_idx, f in enumerate(frags):
        for a in f:
            frag_of[a] = f_idx
    for f_idx, f in enumerate(frags):
        crossing = [(a, b) for a, b in rot if (frag_of[a] == f_idx) != (frag_of[b] == f_idx)]
        anchor = None
        if len(crossing) == 1:
            a, b = crossing[0]
            # axis runs from the atom outside the fragment to the one inside
            anchor = (a, b) if frag_of[b] == f_idx else (b, a)
        flip = anchor is not None and _has_ring(set(f), bonds)
        groups.append((f, "ligand_fragment", anchor, flip, None))
        residue_of_group.append(None)

    centre = np.asarray(cfg.r_centre)
    dist = np.linalg.norm(system.positions - centre, axis=1)
    inside = dist <= cfg.r_cutoff

    order = sorted(range(len(groups)), key=lambda k: groups[k][0][0])
    micro: list[MicroGroup] = []
    keys: list[tuple[int, int]] = []
    old_to_new: dict[int, int] = {}
    for k in order:
        atoms, kind, anchor, flip, resid = groups[k]
        if not inside[atoms].any():
            continue
        old_to_new[k] = len(micro)
        micro.append(MicroGroup(len(micro), tuple(atoms), kind, anchor, flip, resid))
        keys.append((MICRO_KINDS.index(kind), int(system.atom_ids[atoms[0]])))
    if not micro:
        raise EmptyMovableSet(f"no atom within {cfg.r_cutoff} A of {cfg.r_centre}")

    # loop macro-groups: maximal runs of consecutive loop residues in one molecule
    macro: list[MacroGroup] = []
    run: list[int] = []
    prev = None
    res_keys = list(residues)
    res_ss = {key: str(ann.secondary_structure[atoms[0]]) for key, atoms in residues.items()}

    groups_of_residue: dict[tuple[int, int], list[int]] = {}
    for k, rk in enumerate(residue_of_group):
        if rk is not None and k in old_to_new:
            groups_of_residue.setdefault(rk, []).append(old_to_new[k])

    def flush():
        members = []
        for key in run:
            members.extend(groups_of_residue.get(key, ()))
        if members:
            macro.append(MacroGroup(len(macro), tuple(sorted(members)), "protein_loop"))

    for key in res_keys:
        contiguous = prev is not None and key[0] == prev[0] and key[1] == prev[1] + 1
        if res_ss[key] == "loop":
            if run and not contiguous:
                flush()
                run = []
            run.append(key)
        else:
            if run:
                flush()
            run = []
        prev = key
    if run:
        flush()

    lig_micro = tuple(m.id for m in micro if m.kind == "ligand_fragment")
    if not lig_micro:
        raise LigandAbsent("ligand lies outside the pocket cutoff")
    macro.append(MacroGroup(len(macro), lig_micro, "ligand"))

    movable = np.array(sorted(a for g in micro for a in g.atoms), dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[movable] = True
    return SegmentationPlan(
        movable_atoms=movable,
        fixed_atoms=np.flatnonzero(~mask),
        micro_groups=micro,
        macro_groups=macro,
        config=cfg,
        atom_count=n,
        ligand_atoms=ligand.astype(np.int64),
        group_keys=keys,
    )
