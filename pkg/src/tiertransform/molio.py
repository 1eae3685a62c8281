"""Readers and writers for system data, annotations, conformations and tables.

The system data file is a section-based text format close to a LAMMPS data
file: a header of ``<n> <keyword>`` count lines followed by titled sections.
Angles and phases are stored in degrees on disk and converted to radians once,
at parse time.

Bonded terms are kept as 0-based atom *indices* (positions in the Atoms
section), not file ids; ``MolecularSystem.atom_ids`` maps back.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DanglingReference,
    DuplicateId,
    IoFailure,
    MalformedFile,
    RotatableBondNotInTopology,
    RowCountMismatch,
    UnknownSecondaryStructureLabel,
)

__all__ = [
    "MolecularSystem",
    "AtomAnnotations",
    "ConformationSet",
    "parse_system",
    "parse_annotations",
    "write_system",
    "write_annotations",
    "write_conformations",
    "read_conformations",
    "write_table",
    "read_table",
    "element_symbols",
]

HEADER_KEYWORDS = (
    "atoms",
    "bonds",
    "angles",
    "dihedrals",
    "impropers",
    "atom types",
    "bond types",
    "angle types",
    "dihedral types",
    "improper types",
)

SECTIONS = (
    "Masses",
    "Pair Coeffs",
    "Bond Coeffs",
    "Angle Coeffs",
    "Dihedral Coeffs",
    "Improper Coeffs",
    "Atoms",
    "Bonds",
    "Angles",
    "Dihedrals",
    "Impropers",
)

TERM_ARITY = {"Bonds": 2, "Angles": 3, "Dihedrals": 4, "Impropers": 4}

SECONDARY_STRUCTURE = ("helix", "sheet", "loop", "none")


@dataclass
class MolecularSystem:
    """Atoms, bonded topology and force-field coefficients.

    Term arrays have shape ``(n, 1 + arity)``: column 0 is the coefficient id,
    the remaining columns are 0-based atom indices.
    """

    atom_ids: np.ndarray
    molecule_ids: np.ndarray
    type_ids: np.ndarray
    charges: np.ndarray
    positions: np.ndarray
    masses: dict[int, float]
    pair_coeffs: dict[int, tuple[float, float, float, float]]
    bond_coeffs: dict[int, tuple[float, float]] = field(default_factory=dict)
    angle_coeffs: dict[int, tuple[float, float]] = field(default_factory=dict)
    dihedral_coeffs: dict[int, list[tuple[float, int, float]]] = field(default_factory=dict)
    improper_coeffs: dict[int, tuple[float, float]] = field(default_factory=dict)
    bonds: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    angles: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    dihedrals: np.ndarray = field(default_factory=lambda: np.zeros((0, 5), dtype=np.int64))
    impropers: np.ndarray = field(default_factory=lambda: np.zeros((0, 5), dtype=np.int64))

    @property
    def atom_count(self) -> int:
        return len(self.atom_ids)

    def index_of(self, atom_id: int) -> int:
        try:
            return self._id_index[int(atom_id)]
        except AttributeError:
            self._id_index = {int(a): i for i, a in enumerate(self.atom_ids)}
            return self._id_index[int(atom_id)]

    def bond_pairs(self) -> set[tuple[int, int]]:
        """Unordered bonded index pairs as ``(min, max)`` tuples."""
        b = self.bonds[:, 1:]
        return {(int(min(i, j)), int(max(i, j))) for i, j in b}


@dataclass
class AtomAnnotations:
    residue_ids: np.ndarray
    residue_names: np.ndarray
    is_ligand: np.ndarray
    is_backbone: np.ndarray
    secondary_structure: np.ndarray
    # (atom_id_a, atom_id_b) with the b side moving
    rotatable_bonds: list[tuple[int, int]] = field(default_factory=list)
    ligand_fragment_map: np.ndarray | None = None


@dataclass
class ConformationSet:
    frames: list[tuple[str, np.ndarray]]
    element_symbols: list[str]

    def __post_init__(self):
        n = len(self.element_symbols)
        for label, xyz in self.frames:
            if np.shape(xyz) != (n, 3):
                raise ValueError(f"frame {label!r} has shape {np.shape(xyz)}, expected ({n}, 3)")


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _numbers(tokens, kinds, lineno, path):
    try:
        return [k(t) for k, t in zip(kinds, tokens)]
    except ValueError as exc:
        raise MalformedFile(f"bad number: {exc}", lineno, path) from None


def parse_system(path) -> MolecularSystem:
    """Parse a system data file into a :class:`MolecularSystem`."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    counts: dict[str, int] = {}
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current = None
    for lineno, raw in enumerate(lines, start=1):
        text = _strip(raw)
        if not text:
            continue
        if text in SECTIONS:
            if text in sections:
                raise MalformedFile(f"section {text!r} appears twice", lineno, path)
            current = text
            sections[current] = []
            continue
        tokens = text.split()
        if current is None:
            keyword = " ".join(tokens[1:])
            if keyword not in HEADER_KEYWORDS:
                if tokens[0][:1].isalpha():
                    raise MalformedFile(f"unknown section {text!r}", lineno, path)
                raise MalformedFile(f"unknown header line {text!r}", lineno, path)
            try:
                counts[keyword] = int(tokens[0])
            except ValueError:
                raise MalformedFile(f"bad count in {text!r}", lineno, path) from None
            if counts[keyword] < 0:
                raise MalformedFile(f"negative count in {text!r}", lineno, path)
            continue
        if tokens[0][:1].isalpha():
            raise MalformedFile(f"unknown section {text!r}", lineno, path)
        sections[current].append((lineno, tokens))

    if "atoms" not in counts:
        raise MalformedFile("header lacks '<n> atoms'", None, path)

    masses: dict[int, float] = {}
    for lineno, tok in sections.get("Masses", []):
        if len(tok) != 2:
            raise MalformedFile("Masses rows are 'type_id mass'", lineno, path)
        t, m = _numbers(tok, (int, float), lineno, path)
        if t in masses:
            raise DuplicateId(f"atom type {t} listed twice in Masses", lineno, path)
        masses[t] = m

    pair_coeffs: dict[int, tuple[float, float, float, float]] = {}
    for lineno, tok in sections.get("Pair Coeffs", []):
        if len(tok) not in (3, 5):
            raise MalformedFile("Pair Coeffs rows are 'type eps sigma [eps14 sigma14]'", lineno, path)
        vals = _numbers(tok, (int, float, float, float, float), lineno, path)
        t = vals[0]
        eps, sig = vals[1], vals[2]
        eps14, sig14 = (vals[3], vals[4]) if len(vals) == 5 else (eps, sig)
        if t in pair_coeffs:
            raise DuplicateId(f"atom type {t} listed twice in Pair Coeffs", lineno, path)
        if not (sig > 0 and sig14 > 0 and eps >= 0 and eps14 >= 0):
            raise MalformedFile("pair coefficients need sigma > 0 and epsilon >= 0", lineno, path)
        pair_coeffs[t] = (eps, sig, eps14, sig14)

    def harmonic(name, degrees):
        out = {}
        for lineno, tok in sections.get(name, []):
            if len(tok) != 3:
                raise MalformedFile(f"{name} rows are 'id K value'", lineno, path)
            i, k, v = _numbers(tok, (int, float, float), lineno, path)
            if i in out:
                raise DuplicateId(f"coefficient {i} listed twice in {name}", lineno, path)
            if k < 0:
                raise MalformedFile("force constant must be >= 0", lineno, path)
            out[i] = (k, math.radians(v) if degrees else v)
        return out

    bond_coeffs = harmonic("Bond Coeffs", False)
    angle_coeffs = harmonic("Angle Coeffs", True)
    improper_coeffs = harmonic("Improper Coeffs", True)

    dihedral_coeffs: dict[int, list[tuple[float, int, float]]] = {}
    for lineno, tok in sections.get("Dihedral Coeffs", []):
        if len(tok) != 4:
            raise MalformedFile("Dihedral Coeffs rows are 'id K n d'", lineno, path)
        i, k, n, d = _numbers(tok, (int, float, int, float), lineno, path)
        if n < 1 or k < 0:
            raise MalformedFile("dihedral needs n >= 1 and K >= 0", lineno, path)
        dihedral_coeffs.setdefault(i, []).append((k, n, math.radians(d)))

    atom_rows = sections.get("Atoms", [])
    n_atoms = len(atom_rows)
    if n_atoms != counts["atoms"]:
        raise MalformedFile(
            f"header declares {counts['atoms']} atoms, Atoms section has {n_atoms}", None, path
        )
    atom_ids = np.empty(n_atoms, dtype=np.int64)
    mol_ids = np.empty(n_atoms, dtype=np.int64)
    type_ids = np.empty(n_atoms, dtype=np.int64)
    charges = np.empty(n_atoms)
    positions = np.empty((n_atoms, 3))
    index: dict[int, int] = {}
    for k, (lineno, tok) in enumerate(atom_rows):
        if len(tok) != 7:
            raise MalformedFile("Atoms rows are 'id mol type charge x y z'", lineno, path)
        aid, mid, tid, q, x, y, z = _numbers(tok, (int, int, int, float, float, float, float), lineno, path)
        if aid in index:
            raise DuplicateId(f"atom id {aid} listed twice", lineno, path)
        if tid not in pair_coeffs:
            raise DanglingReference(f"atom {aid} uses type {tid} without Pair Coeffs", lineno, path)
        if not all(math.isfinite(v) for v in (q, x, y, z)):
            raise MalformedFile("non-finite charge or coordinate", lineno, path)
        index[aid] = k
        atom_ids[k], mol_ids[k], type_ids[k], charges[k] = aid, mid, tid, q
        positions[k] = (x, y, z)

    coeff_tables = {
        "Bonds": bond_coeffs,
        "Angles": angle_coeffs,
        "Dihedrals": dihedral_coeffs,
        "Impropers": improper_coeffs,
    }
    terms = {}
    for name, arity in TERM_ARITY.items():
        rows = sections.get(name, [])
        key = name.lower()
        if len(rows) != counts.get(key, 0):
            raise MalformedFile(
                f"header declares {counts.get(key, 0)} {key}, section has {len(rows)}", None, path
            )
        arr = np.empty((len(rows), 1 + arity), dtype=np.int64)
        seen = set()
        for k, (lineno, tok) in enumerate(rows):
            if len(tok) != 2 + arity:
                raise MalformedFile(f"{name} rows are 'id coeff' + {arity} atom ids", lineno, path)
            vals = _numbers(tok, [int] * (2 + arity), lineno, path)
            if vals[0] in seen:
                raise DuplicateId(f"{name} term id {vals[0]} listed twice", lineno, path)
            seen.add(vals[0])
            if vals[1] not in coeff_tables[name]:
                raise DanglingReference(f"{name} term {vals[0]} uses missing coeff {vals[1]}", lineno, path)
            arr[k, 0] = vals[1]
            for c, aid in enumerate(vals[2:], start=1):
                if aid not in index:
                    raise DanglingReference(f"{name} term {vals[0]} references missing atom {aid}", lineno, path)
                arr[k, c] = index[aid]
            if len(set(arr[k, 1:])) != arity:
                raise MalformedFile(f"{name} term {vals[0]} repeats an atom", lineno, path)
        terms[key] = arr

    for key, table in (
        ("atom types", pair_coeffs),
        ("bond types", bond_coeffs),
        ("angle types", angle_coeffs),
        ("dihedral types", dihedral_coeffs),
        ("improper types", improper_coeffs),
    ):
        if key in counts and counts[key] != len(table):
            raise MalformedFile(f"header declares {counts[key]} {key}, found {len(table)}", None, path)

    return MolecularSystem(
        atom_ids=atom_ids,
        molecule_ids=mol_ids,
        type_ids=type_ids,
        charges=charges,
        positions=positions,
        masses=masses,
        pair_coeffs=pair_coeffs,
        bond_coeffs=bond_coeffs,
        angle_coeffs=angle_coeffs,
        dihedral_coeffs=dihedral_coeffs,
        improper_coeffs=improper_coeffs,
        bonds=terms["bonds"],
        angles=terms["angles"],
        dihedrals=terms["dihedrals"],
        impropers=terms["impropers"],
    )


def _fmt(x) -> str:
    return repr(float(x))


def write_system(system: MolecularSystem, path) -> None:
    """Write ``system`` in the format :func:`parse_system` reads."""
    ids = system.atom_ids
    out = ["# system data", ""]
    out.append(f"{system.atom_count} atoms")
    for key, arr in (
        ("bonds", system.bonds),
        ("angles", system.angles),
        ("dihedrals", system.dihedrals),
        ("impropers", system.impropers),
    ):
        out.append(f"{len(arr)} {key}")
    out.append(f"{len(system.pair_coeffs)} atom types")
    out.append(f"{len(system.bond_coeffs)} bond types")
    out.append(f"{len(system.angle_coeffs)} angle types")
    out.append(f"{len(system.dihedral_coeffs)} dihedral types")
    out.append(f"{len(system.improper_coeffs)} improper types")

    def section(title, rows):
        if rows:
            out.extend(["", title, ""])
            out.extend(rows)

    section("Masses", [f"{t} {_fmt(m)}" for t, m in sorted(system.masses.items())])
    section(
        "Pair Coeffs",
        [f"{t} {_fmt(e)} {_fmt(s)} {_fmt(e14)} {_fmt(s14)}" for t, (e, s, e14, s14) in sorted(system.pair_coeffs.items())],
    )
    section("Bond Coeffs", [f"{i} {_fmt(k)} {_fmt(r0)}" for i, (k, r0) in sorted(system.bond_coeffs.items())])
    section(
        "Angle Coeffs",
        [f"{i} {_fmt(k)} {_fmt(math.degrees(t0))}" for i, (k, t0) in sorted(system.angle_coeffs.items())],
    )
    section(
        "Dihedral Coeffs",
        [
            f"{i} {_fmt(k)} {n} {_fmt(math.degrees(d))}"
            for i, terms in sorted(system.dihedral_coeffs.items())
            for k, n, d in terms
        ],
    )
    section(
        "Improper Coeffs",
        [f"{i} {_fmt(k)} {_fmt(math.degrees(c))}" for i, (k, c) in sorted(system.improper_coeffs.items())],
    )
    section(
        "Atoms",
        [
            f"{ids[k]} {system.molecule_ids[k]} {system.type_ids[k]} {_fmt(system.charges[k])} "
            f"{_fmt(system.positions[k, 0])} {_fmt(system.positions[k, 1])} {_fmt(system.positions[k, 2])}"
            for k in range(system.atom_count)
        ],
    )
    for title, arr in (
        ("Bonds", system.bonds),
        ("Angles", system.angles),
        ("Dihedrals", system.dihedrals),
        ("Impropers", system.impropers),
    ):
        section(
            title,
            [f"{n + 1} {row[0]} " + " ".join(str(ids[a]) for a in row[1:]) for n, row in enumerate(arr)],
        )
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


ANNOTATION_HEADER = ["atom_id", "residue_id", "residue_name", "is_ligand", "is_backbone", "secondary_structure"]


def _parse_bool(text, lineno, path):
    t = text.strip().lower()
    if t in ("1", "true", "t", "yes", "y"):
        return True
    if t in ("0", "false", "f", "no", "n"):
        return False
    raise MalformedFile(f"bad boolean {text!r}", lineno, path)


def parse_annotations(path, system: MolecularSystem) -> AtomAnnotations:
    """Parse the per-atom annotation table plus its ``ROTATABLE`` section."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    table_lines, rot_lines = [], []
    target = table_lines
    for lineno, raw in enumerate(lines, start=1):
        text = _strip(raw)
        if not text:
            continue
        if text.upper() == "ROTATABLE":
            target = rot_lines
            continue
        target.append((lineno, text))
    if not table_lines:
        raise MalformedFile("annotation file has no header", None, path)

    header = [h.strip() for h in table_lines[0][1].split(",")]
    has_fragments = header == ANNOTATION_HEADER + ["fragment_id"]
    if header != ANNOTATION_HEADER and not has_fragments:
        raise MalformedFile(f"unexpected header {header}", table_lines[0][0], path)

    n = system.atom_count
    rows = table_lines[1:]
    if len(rows) != n:
        raise RowCountMismatch(f"{len(rows)} annotation rows for {n} atoms", None, path)

    residue_ids = np.empty(n, dtype=np.int64)
    residue_names = np.empty(n, dtype=object)
    is_ligand = np.zeros(n, dtype=bool)
    is_backbone = np.zeros(n, dtype=bool)
    ss = np.empty(n, dtype=object)
    frag = np.full(n, -1, dtype=np.int64) if has_fragments else None
    seen = set()
    for lineno, text in rows:
        cells = [c.strip() for c in next(csv.reader([text]))]
        if len(cells) != len(header):
            raise MalformedFile(f"expected {len(header)} fields, got {len(cells)}", lineno, path)
        try:
            aid = int(cells[0])
            k = system.index_of(aid)
        except (ValueError, KeyError):
            raise DanglingReference(f"annotation for unknown atom {cells[0]!r}", lineno, path) from None
        if k in seen:
            raise DuplicateId(f"atom {aid} annotated twice", lineno, path)
        seen.add(k)
        try:
            residue_ids[k] = int(cells[1])
        except ValueError:
            raise MalformedFile(f"bad residue id {cells[1]!r}", lineno, path) from None
        residue_names[k] = cells[2].upper()
        is_ligand[k] = _parse_bool(cells[3], lineno, path)
        is_backbone[k] = _parse_bool(cells[4], lineno, path)
        label = cells[5].lower()
        if label not in SECONDARY_STRUCTURE:
            raise UnknownSecondaryStructureLabel(f"secondary structure {cells[5]!r}", lineno, path)
        if is_ligand[k] and label != "none":
            raise MalformedFile(f"ligand atom {aid} must have secondary structure 'none'", lineno, path)
        ss[k] = label
        if frag is not None and cells[6] != "":
            try:
                frag[k] = int(cells[6])
            except ValueError:
                raise MalformedFile(f"bad fragment id {cells[6]!r}", lineno, path) from None

    bonds = system.bond_pairs()
    rotatable = []
    for lineno, text in rot_lines:
        tok = text.replace(",", " ").split()
        if len(tok) != 2:
            raise MalformedFile("ROTATABLE rows are 'a b'", lineno, path)
        try:
            a, b = int(tok[0]), int(tok[1])
            ia, ib = system.index_of(a), system.index_of(b)
        except (ValueError, KeyError):
            raise RotatableBondNotInTopology(f"rotatable bond {text!r} references unknown atoms", lineno, path) from None
        if (min(ia, ib), max(ia, ib)) not in bonds:
            raise RotatableBondNotInTopology(f"atoms {a} and {b} are not bonded", lineno, path)
        rotatable.append((a, b))

    return AtomAnnotations(
        residue_ids=residue_ids,
        residue_names=residue_names,
        is_ligand=is_ligand,
        is_backbone=is_backbone,
        secondary_structure=ss,
        rotatable_bonds=rotatable,
        ligand_fragment_map=frag,
    )


def write_annotations(ann: AtomAnnotations, system: MolecularSystem, path) -> None:
    header = list(ANNOTATION_HEADER)
    if ann.ligand_fragment_map is not None:
        header.append("fragment_id")
    out = [",".join(header)]
    for k in range(system.atom_count):
        row = [
            str(system.atom_ids[k]),
            str(ann.residue_ids[k]),
            str(ann.residue_names[k]),
            "1" if ann.is_ligand[k] else "0",
            "1" if ann.is_backbone[k] else "0",
            str(ann.secondary_structure[k]),
        ]
        if ann.ligand_fragment_map is not None:
            f = ann.ligand_fragment_map[k]
            row.append("" if f < 0 else str(f))
        out.append(",".join(row))
    out.append("ROTATABLE")
    out.extend(f"{a} {b}" for a, b in ann.rotatable_bonds)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


_ELEMENT_MASSES = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "NA": 22.990,
    "MG": 24.305, "P": 30.974, "S": 32.06, "CL": 35.45, "K": 39.098, "CA": 40.078,
    "FE": 55.845, "ZN": 65.38, "BR": 79.904, "I": 126.904,
}


def element_symbols(system: MolecularSystem) -> list[str]:
    """Guess element symbols from per-type masses (nearest element within 0.5 amu)."""
    names = list(_ELEMENT_MASSES)
    ref = np.array([_ELEMENT_MASSES[e] for e in names])
    by_type = {}
    for t, m in system.masses.items():
        k = int(np.argmin(np.abs(ref - m)))
        sym = names[k] if abs(ref[k] - m) < 0.5 else "X"
        by_type[t] = sym.capitalize()
    return [by_type.get(int(t), "X") for t in system.type_ids]


def write_conformations(conformations: ConformationSet, path) -> None:
    """Write all frames as a multi-frame XYZ file."""
    if not conformations.frames:
        raise ValueError("no frames to write")
    out = []
    syms = conformations.element_symbols
    for label, xyz in conformations.frames:
        xyz = np.asarray(xyz, dtype=float)
        out.append(str(len(syms)))
        out.append(label.replace("\n", " "))
        out.extend(f"{s} {x:.10f} {y:.10f} {z:.10f}" for s, (x, y, z) in zip(syms, xyz))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_conformations(path) -> ConformationSet:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    frames = []
    symbols = None
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        try:
            n = int(lines[pos].strip())
        except ValueError:
            raise MalformedFile("expected atom count", pos + 1, path) from None
        label = lines[pos + 1] if pos + 1 < len(lines) else ""
        block = lines[pos + 2 : pos + 2 + n]
        if len(block) != n:
            raise MalformedFile("truncated XYZ frame", pos + 1, path)
        syms = []
        xyz = np.empty((n, 3))
        for k, row in enumerate(block):
            tok = row.split()
            if len(tok) < 4:
                raise MalformedFile("XYZ rows are 'symbol x y z'", pos + 3 + k, path)
            syms.append(tok[0])
            xyz[k] = [float(t) for t in tok[1:4]]
        if symbols is None:
            symbols = syms
        elif syms != symbols:
            raise MalformedFile("frames disagree on atom ordering", pos + 1, path)
        frames.append((label, xyz))
        pos += 2 + n
    return ConformationSet(frames=frames, element_symbols=symbols or [])


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_table(rows, path, columns=None) -> None:
    """Write records (dicts) as comma-separated text.

    Column order is ``columns`` when given, else the key order of the first
    row. Floats are written with ``repr`` so they round-trip exactly.
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(row.get(c, "")) for c in columns])
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_table(path, numeric=True) -> tuple[list[str], list[dict]]:
    """Read a table written by :func:`write_table`; cells become floats where possible."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, [])
            rows = []
            for cells in reader:
                if not cells:
                    continue
                row = {}
                for key, cell in zip(header, cells):
                    if numeric:
                        try:
                            row[key] = float(cell)
                            continue
                        except ValueError:
                            pass
                    row[key] = cell
                rows.append(row)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return header, rows
