import math

import numpy as np
import pytest

from tiertransform.errors import FailedRecord, LengthNotDivisible, ScoreCountMismatch, ShapeMismatch
from tiertransform.features import (
    FormationEnergy,
    assemble_features,
    delta_e_trace,
    downsample_trace,
    fallback_scores,
    feature_columns,
    feature_rows,
    mask_columns,
    read_score_table,
)
from tiertransform.ffenergy import EnergyModel, NonbondedSettings, energy, interaction_energy
from tiertransform.molio import MolecularSystem, write_table
from tiertransform.protocol import ProtocolConfig, generate_conformations

NO_SKIP = NonbondedSettings(skip_fixed_fixed=False)


def subsystem(system, keep):
    """The atoms in ``keep`` as a standalone system with the terms fully inside them."""
    keep = np.asarray(keep, dtype=bool)
    new_index = np.cumsum(keep) - 1

    def terms(arr):
        inside = keep[arr[:, 1:]].all(axis=1)
        out = arr[inside].copy()
        out[:, 1:] = new_index[out[:, 1:]]
        return out

    return MolecularSystem(
        atom_ids=system.atom_ids[keep],
        molecule_ids=system.molecule_ids[keep],
        type_ids=system.type_ids[keep],
        charges=system.charges[keep],
        positions=system.positions[keep],
        masses=system.masses,
        pair_coeffs=system.pair_coeffs,
        bond_coeffs=system.bond_coeffs,
        angle_coeffs=system.angle_coeffs,
        dihedral_coeffs=system.dihedral_coeffs,
        improper_coeffs=system.improper_coeffs,
        bonds=terms(system.bonds),
        angles=terms(system.angles),
        dihedrals=terms(system.dihedrals),
        impropers=terms(system.impropers),
    )


@pytest.mark.parametrize("settings", [NO_SKIP, NonbondedSettings()], ids=["all-pairs", "skip-fixed"])
def test_separated_ligand_has_zero_formation_energy(toy, settings):
    system, ann, plan = toy
    coords = system.positions.copy()
    coords[ann.is_ligand] += [0.0, 0.0, 100.0]
    form = FormationEnergy(system, plan, settings)
    e_complex = EnergyModel(system, settings, active=plan.movable_mask()).evaluate(coords)[0].e_total
    assert form.delta_e(e_complex, form.ligand_energy(coords)) == pytest.approx(0.0, abs=1e-9)


def test_formation_energy_matches_three_standalone_evaluations(chain_pocket):
    system, ann, plan = chain_pocket
    cfg = ProtocolConfig(seeds=[0], n_relax_steps=10, n_minimize_steps=40)
    rec = generate_conformations(system, plan, NO_SKIP, cfg)[0]
    lig = subsystem(system, ann.is_ligand)
    prot = subsystem(system, ~ann.is_ligand)
    e_prot0 = energy(prot, system.positions[~ann.is_ligand], NO_SKIP, use_neighbor_list=False).e_total
    oracle = (
        energy(system, rec.coords, NO_SKIP, use_neighbor_list=False).e_total
        - energy(lig, rec.coords[ann.is_ligand], NO_SKIP, use_neighbor_list=False).e_total
        - e_prot0
    )
    form = FormationEnergy(system, plan, NO_SKIP)
    assert form.e_protein_init == pytest.approx(e_prot0, rel=1e-10)
    # trace rows hold the state before each update; rec.coords is the state after the last one
    assert form.delta_e(rec.final_energy, form.ligand_energy(rec.coords)) == pytest.approx(oracle, rel=1e-9, abs=1e-9)
    de = delta_e_trace(system, plan, rec, NO_SKIP)
    np.testing.assert_allclose(de.delta_e, rec.trace.column("delta_e"), rtol=1e-12)


def test_formation_energy_decomposes_into_interaction_plus_strain(chain_pocket, rng):
    system, ann, plan = chain_pocket
    coords = system.positions.copy()
    mov = plan.movable_mask()
    coords[mov] += rng.normal(0, 0.1, (mov.sum(), 3))
    form = FormationEnergy(system, plan, NO_SKIP)
    e_complex = energy(system, coords, NO_SKIP).e_total
    de = form.delta_e(e_complex, form.ligand_energy(coords))
    prot = subsystem(system, ~ann.is_ligand)
    strain = energy(prot, coords[~ann.is_ligand], NO_SKIP).e_total - energy(prot, system.positions[~ann.is_ligand], NO_SKIP).e_total
    inter = interaction_energy(system, coords, ~ann.is_ligand, ann.is_ligand, NO_SKIP)
    assert de == pytest.approx(inter + strain, rel=1e-10, abs=1e-10)


def test_delta_e_trace_rejects_failed_records(chain_pocket, monkeypatch):
    system, _, plan = chain_pocket
    rec = generate_conformations(system, plan, None, ProtocolConfig(seeds=[0], n_relax_steps=5, n_minimize_steps=5))[0]
    rec.status = "failed"
    with pytest.raises(FailedRecord):
        delta_e_trace(system, plan, rec)


def test_stride_downsampling_keeps_block_ends():
    trace = np.arange(1, 2201, dtype=float)
    out = downsample_trace(trace)
    assert out.shape == (22,)
    np.testing.assert_allclose(out, np.arange(100, 2201, 100) / 1000.0)


def test_mean_downsampling():
    out = downsample_trace(np.arange(1, 2201, dtype=float), method="mean")
    np.testing.assert_allclose(out, (np.arange(22) * 100 + 50.5) / 1000.0)
    np.testing.assert_allclose(downsample_trace([2.0, 4.0, 6.0, 8.0], 2, 1.0, "mean"), [3.0, 7.0])


def test_downsampling_errors():
    with pytest.raises(LengthNotDivisible):
        downsample_trace(np.zeros(2150))
    with pytest.raises(ValueError):
        downsample_trace(np.zeros(200), method="median")
    with pytest.raises(ValueError):
        downsample_trace(np.zeros(200), factor=0)


def test_column_counts():
    assert len(feature_columns(10)) == 232
    assert len(feature_columns(4)) == 94
    assert len(set(feature_columns(10))) == 232
    cols = feature_columns(2, 3)
    assert cols == ["de_c1_1", "de_c1_2", "de_c1_3", "de_c2_1", "de_c2_2", "de_c2_3", "score_initial", "score_relaxed", "score_conf_1", "score_conf_2"]
    assert mask_columns(2) == ["failed_conf_1", "failed_conf_2", "scores_fallback"]


def test_assemble_full_vector():
    traces = [np.full(2200, float(c)) for c in range(10)]
    scores = np.arange(12, dtype=float)
    v = assemble_features(traces, scores, "lig1")
    assert v.values.shape == (232,)
    assert not v.failed.any() and not v.scores_fallback
    np.testing.assert_allclose(v.values[:22], 0.0)
    np.testing.assert_allclose(v.values[22 * 9 : 22 * 10], 9 / 1000.0)
    np.testing.assert_array_equal(v.values[220:], scores)
    row = v.as_row()
    assert row["ligand_id"] == "lig1" and row["score_conf_10"] == 11.0 and row["failed_conf_3"] is False


def test_failed_records_are_masked_not_dropped():
    traces = [np.ones(2200), None, np.ones(2200)]
    v = assemble_features(traces, None, "lig", fallback=[1, 2, 3, math.nan, 5])
    assert v.values.shape == (22 * 3 + 5,)
    assert v.failed.tolist() == [False, True, False]
    assert np.isnan(v.values[22:44]).all()
    assert np.isfinite(v.values[:22]).all() and np.isfinite(v.values[44:66]).all()
    assert v.scores_fallback
    header, rows = feature_rows([v])
    assert header[-4:] == ["failed_conf_1", "failed_conf_2", "failed_conf_3", "scores_fallback"]
    assert rows[0]["failed_conf_2"] is True and rows[0]["scores_fallback"] is True


def test_assemble_errors():
    with pytest.raises(ScoreCountMismatch):
        assemble_features([np.ones(2200)] * 2, [1.0, 2.0, 3.0])
    with pytest.raises(ScoreCountMismatch):
        assemble_features([np.ones(2200)] * 2)
    with pytest.raises(ShapeMismatch):
        assemble_features([np.ones(2200), np.ones(2300)], [0.0] * 4)
    with pytest.raises(ShapeMismatch):
        assemble_features([np.ones(2200)], [0.0] * 3, per_conformation=20)


def test_feature_rows_require_common_layout():
    a = assemble_features([np.ones(200)], [0.0] * 3, "a")
    b = assemble_features([np.ones(200)] * 2, [0.0] * 4, "b")
    with pytest.raises(ShapeMismatch):
        feature_rows([a, b])


def test_score_table(tmp_path):
    path = tmp_path / "scores.csv"
    cols = ["ligand_id", "score_initial", "score_relaxed", "score_conf_1", "score_conf_2"]
    write_table([{"ligand_id": "a", "score_initial": -7, "score_relaxed": -7.5, "score_conf_1": -8, "score_conf_2": -6}], path, cols)
    table = read_score_table(path)
    np.testing.assert_array_equal(table["a"], [-7.0, -7.5, -8.0, -6.0])
    write_table([{"name": "a", "x": 1}], path, ["name", "x"])
    with pytest.raises(ScoreCountMismatch):
        read_score_table(path)


def test_fallback_scores(chain_pocket):
    system, ann, plan = chain_pocket
    moved = system.positions.copy()
    moved[ann.is_ligand] += [0.0, 0.0, 100.0]
    s = fallback_scores(system, plan, system.positions, moved, [system.positions, None])
    assert s.shape == (4,)
    assert s[0] == pytest.approx(interaction_energy(system, system.positions, ~ann.is_ligand, ann.is_ligand))
    assert s[0] < 0 or s[0] > 0
    assert s[1] == 0.0 and s[2] == s[0] and math.isnan(s[3])
