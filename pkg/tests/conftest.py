from pathlib import Path

import numpy as np
import pytest

from tiertransform.molio import parse_annotations, parse_system
from tiertransform.segmentation import SegmentationConfig, build_segmentation
from tiertransform.synthetic import peptide_complex

FIXTURES = Path(__file__).parent / "fixtures"


def ligand_centre(system, ann):
    return tuple(system.positions[ann.is_ligand].mean(axis=0))


def make_complex(names, ligand="chain", secondary=None, cutoff=20.0, seed=0, **kw):
    system, ann = peptide_complex(len(names), names, secondary=secondary, ligand=ligand, seed=seed, **kw)
    plan = build_segmentation(system, ann, SegmentationConfig(ligand_centre(system, ann), cutoff))
    return system, ann, plan


# three small complexes used across modules; all under 300 atoms
TOY_SPECS = {
    "chain_pocket": dict(names=["ALA", "PHE", "GLY", "SER"], ligand="chain"),
    "loop_pair": dict(names=["LEU", "TYR", "ALA", "GLY", "VAL"], ligand="pair", secondary=["helix", "loop", "loop", "loop", "sheet"]),
    "partial_pocket": dict(names=["ALA", "PHE", "GLY", "LEU", "TYR", "SER", "ALA"], ligand="chain", cutoff=9.0),
}


@pytest.fixture(params=sorted(TOY_SPECS))
def toy(request):
    return make_complex(**TOY_SPECS[request.param])


@pytest.fixture
def chain_pocket():
    return make_complex(**TOY_SPECS["chain_pocket"])


@pytest.fixture
def water3():
    system = parse_system(FIXTURES / "water3.sys")
    ann = parse_annotations(FIXTURES / "water3.ann", system)
    return system, ann


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _append_atom(system, ann, xyz, type_id=1, resid=99):
    """Copy of (system, ann) with one extra unbonded protein atom in its own residue."""
    from dataclasses import replace

    n = system.atom_count
    sys2 = replace(
        system,
        atom_ids=np.append(system.atom_ids, system.atom_ids.max() + 1),
        molecule_ids=np.append(system.molecule_ids, system.molecule_ids.max() + 1),
        type_ids=np.append(system.type_ids, type_id),
        charges=np.append(system.charges, 0.0),
        positions=np.vstack([system.positions, xyz]),
    )
    ann2 = replace(
        ann,
        residue_ids=np.append(ann.residue_ids, resid),
        residue_names=np.append(ann.residue_names, "XXX"),
        is_ligand=np.append(ann.is_ligand, False),
        is_backbone=np.append(ann.is_backbone, True),
        secondary_structure=np.append(ann.secondary_structure, "none"),
    )
    assert sys2.atom_count == n + 1
    return sys2, ann2


def flip_fixture(clash=False):
    """One ring-flip eligible PHE sidechain beside a single-atom ligand.

    The ligand sits 4 A off the ring plane and the pocket radius (4.5 A)
    takes in the ring but little else. With ``clash`` an extra fixed atom is
    placed 0.5 A from where one ring atom lands after a 180 degree flip
    about the CA-CB bond.
    """
    from scipy.spatial.transform import Rotation

    names = ["ALA", "PHE", "GLY"]
    probe, pann = peptide_complex(3, names, ligand="atom")
    ring = [i for i in range(probe.atom_count) if pann.residue_names[i] == "PHE" and not pann.is_backbone[i]]
    centre = probe.positions[ring[1:]].mean(axis=0)
    offset = centre + np.array([0.0, 4.0, 0.0]) - np.array([3.6, 0.0, 0.0])
    system, ann = peptide_complex(3, names, ligand="atom", ligand_offset=tuple(offset))
    lig = tuple(system.positions[ann.is_ligand][0])
    if clash:
        ca = next(i for i in range(system.atom_count) if ann.residue_ids[i] == 2 and ann.is_backbone[i] and system.type_ids[i] == 2)
        cb = ring[0]
        axis = system.positions[cb] - system.positions[ca]
        rot = Rotation.from_rotvec(np.pi * axis / np.linalg.norm(axis))
        flipped = rot.apply(system.positions[ring[3]] - system.positions[ca]) + system.positions[ca]
        system, ann = _append_atom(system, ann, flipped + np.array([0.0, -0.5, 0.0]))
    plan = build_segmentation(system, ann, SegmentationConfig(lig, 4.5))
    return system, ann, plan


# acceptance verdicts, printed in the terminal summary so they survive output capture
ACCEPTANCE = []


def verdict(number, title, checks):
    """Record and print one criterion line; fails the calling test if any check failed."""
    failed = [label for label, ok in checks if not ok]
    line = f"criterion {number:>2} {'PASS' if not failed else 'FAIL'}: {title}"
    if failed:
        line += " (failed: " + "; ".join(failed) + ")"
    ACCEPTANCE.append((number, line))
    print(line)
    assert not failed, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
