import math

import numpy as np
import pytest

from tiertransform.errors import (
    DanglingReference,
    DuplicateId,
    IoFailure,
    MalformedFile,
    RotatableBondNotInTopology,
    RowCountMismatch,
    UnknownSecondaryStructureLabel,
)
from tiertransform.molio import (
    ConformationSet,
    element_symbols,
    parse_annotations,
    parse_system,
    read_conformations,
    read_table,
    write_annotations,
    write_conformations,
    write_system,
    write_table,
)
from tiertransform.synthetic import peptide_complex

from conftest import FIXTURES


def test_water3_counts(water3):
    system, ann = water3
    # counted by hand from the fixture file
    assert system.atom_count == 9
    assert len(system.bonds) == 6
    assert len(system.angles) == 3
    assert len(system.dihedrals) == 0
    assert system.masses == {1: 15.9994, 2: 1.008}
    assert system.pair_coeffs[1] == (0.1521, 3.1507, 0.1521, 3.1507)
    assert system.angle_coeffs[1][1] == pytest.approx(math.radians(104.52))
    assert np.isclose(system.charges.sum(), 0.0)
    assert ann.is_ligand.sum() == 3
    assert list(ann.residue_names[:3]) == ["WAT"] * 3
    assert ann.rotatable_bonds == []


def test_bond_indices_are_zero_based(water3):
    system, _ = water3
    assert system.bonds[0].tolist() == [1, 0, 1]
    assert system.angles[2].tolist() == [1, 7, 6, 8]


def test_system_round_trip(tmp_path):
    system, ann = peptide_complex(3, ["ALA", "PHE", "GLY"], ligand="chain")
    write_system(system, tmp_path / "s.sys")
    write_annotations(ann, system, tmp_path / "s.ann")
    back = parse_system(tmp_path / "s.sys")
    ann2 = parse_annotations(tmp_path / "s.ann", back)
    np.testing.assert_array_equal(back.positions, system.positions)
    np.testing.assert_array_equal(back.charges, system.charges)
    for name in ("bonds", "angles", "dihedrals", "impropers"):
        np.testing.assert_array_equal(getattr(back, name), getattr(system, name))
    for k, (kb, r0) in system.bond_coeffs.items():
        assert back.bond_coeffs[k] == (kb, r0)
    for k, (ka, t0) in system.angle_coeffs.items():
        assert back.angle_coeffs[k][1] == pytest.approx(t0, abs=1e-12)
    assert ann2.rotatable_bonds == ann.rotatable_bonds
    np.testing.assert_array_equal(ann2.is_ligand, ann.is_ligand)


def _water_text():
    return (FIXTURES / "water3.sys").read_text()


@pytest.mark.parametrize(
    "edit, error",
    [
        (lambda t: t.replace("9 atoms", "10 atoms"), MalformedFile),
        (lambda t: t.replace("6 bonds", "5 bonds"), MalformedFile),
        (lambda t: t.replace("6 1 7 9", "6 1 7 99"), DanglingReference),
        (lambda t: t.replace("3 1 8 7 9", "3 2 8 7 9"), DanglingReference),
        (lambda t: t.replace("5 1 7 8", "4 1 7 8"), DuplicateId),
        (lambda t: t.replace("9 3 2 0.417", "8 3 2 0.417"), DuplicateId),
        (lambda t: t.replace("Angle Coeffs", "Angel Coeffs"), MalformedFile),
        (lambda t: t.replace("2 atom types", "2 atom kinds"), MalformedFile),
        (lambda t: t.replace("1 1 1 -0.834 0.0 0.0 0.0", "1 1 1 -0.834 0.0 0.0"), MalformedFile),
        (lambda t: t.replace("1 1 1 -0.834 0.0 0.0 0.0", "1 1 3 -0.834 0.0 0.0 0.0"), DanglingReference),
        (lambda t: t.replace("1 1 1 2\n", "1 1 1 1\n"), MalformedFile),
    ],
)
def test_malformed_system(tmp_path, edit, error):
    path = tmp_path / "bad.sys"
    path.write_text(edit(_water_text()))
    with pytest.raises(error) as info:
        parse_system(path)
    assert isinstance(info.value, MalformedFile)


def test_error_reports_line(tmp_path):
    path = tmp_path / "bad.sys"
    path.write_text(_water_text().replace("6 1 7 9", "6 1 7 99"))
    with pytest.raises(DanglingReference) as info:
        parse_system(path)
    assert info.value.line is not None
    assert str(info.value.line) in str(info.value)


def test_missing_file():
    with pytest.raises(IoFailure):
        parse_system(FIXTURES / "nope.sys")


def _ann_text():
    return (FIXTURES / "water3.ann").read_text()


@pytest.mark.parametrize(
    "edit, error",
    [
        (lambda t: t.replace("9,3,LIG,1,0,none\n", ""), RowCountMismatch),
        (lambda t: t.replace("4,2,WAT,0,1,loop", "4,2,WAT,0,1,coil"), UnknownSecondaryStructureLabel),
        (lambda t: t.replace("ROTATABLE\n", "ROTATABLE\n1 4\n"), RotatableBondNotInTopology),
        (lambda t: t.replace("9,3,LIG", "8,3,LIG"), DuplicateId),
        (lambda t: t.replace("9,3,LIG", "19,3,LIG"), DanglingReference),
        (lambda t: t.replace("7,3,LIG,1,0,none", "7,3,LIG,1,0,helix"), MalformedFile),
        (lambda t: t.replace("atom_id,", "atom,"), MalformedFile),
    ],
)
def test_malformed_annotations(tmp_path, water3, edit, error):
    system, _ = water3
    path = tmp_path / "bad.ann"
    path.write_text(edit(_ann_text()))
    with pytest.raises(error):
        parse_annotations(path, system)


def test_fragment_column(tmp_path, water3):
    system, _ = water3
    lines = _ann_text().splitlines()
    lines[0] += ",fragment_id"
    for k in range(1, 10):
        lines[k] += ",1" if k >= 7 else ","
    path = tmp_path / "frag.ann"
    path.write_text("\n".join(lines) + "\n")
    ann = parse_annotations(path, system)
    assert ann.ligand_fragment_map.tolist() == [-1] * 6 + [1] * 3


def test_xyz_round_trip(tmp_path, water3):
    system, _ = water3
    syms = element_symbols(system)
    assert syms == ["O", "H", "H"] * 3
    frames = [("initial", system.positions), ("moved", system.positions + 0.123456789)]
    write_conformations(ConformationSet(frames, syms), tmp_path / "c.xyz")
    back = read_conformations(tmp_path / "c.xyz")
    assert [f[0] for f in back.frames] == ["initial", "moved"]
    np.testing.assert_allclose(back.frames[1][1], frames[1][1], atol=1e-10)


def test_table_round_trip_is_exact(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": "x", "c": 3}, {"a": -1e-300, "b": "y,z", "c": 4}]
    write_table(rows, tmp_path / "t.csv")
    header, back = read_table(tmp_path / "t.csv")
    assert header == ["a", "b", "c"]
    assert back[0]["a"] == 0.1 + 0.2
    assert back[1]["a"] == -1e-300
    assert back[1]["b"] == "y,z"
