import json

import numpy as np
import pytest

from rotamer_forge.errors import PDBParseError
from rotamer_forge.residues import CHI_COUNT, ELEMENTS
from rotamer_forge.structures import (DatasetManifest, StructureMetadata, filter_dataset, parse_pdb,
                                      read_pdb, to_pdb)


def atom_line(serial, name, resname, chain, resseq, xyz, occ=1.0, element="", altloc=" ", record="ATOM  "):
    name_field = f" {name:<3}" if len(name) < 4 else name
    x, y, z = xyz
    return (f"{record}{serial:5d} {name_field}{altloc}{resname:>3} {chain}{resseq:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}{occ:6.2f}{20.0:6.2f}          {element:>2}")


def test_empty_input_is_a_parse_error():
    with pytest.raises(PDBParseError):
        parse_pdb("")


def test_single_atom_read_back_verbatim():
    s = parse_pdb(atom_line(1, "N", "ALA", "A", 1, (1.0, 2.0, 3.0), element="N"))
    (res,) = s.residues
    assert s.n_atoms == 1
    assert res.amino_acid == "ALA"
    assert res.atoms[0].coords == (1.0, 2.0, 3.0)
    assert res.atoms[0].element == "N"
    assert not res.complete


def test_malformed_coordinate_names_line():
    text = "\n".join([
        "HEADER    TEST",
        atom_line(1, "N", "ALA", "A", 1, (1.0, 2.0, 3.0)),
        atom_line(2, "CA", "ALA", "A", 1, (1.0, 2.0, 3.0)).replace("   2.000", "   x.abc", 1),
    ])
    with pytest.raises(PDBParseError, match="line 3"):
        parse_pdb(text)


def test_mse_becomes_met_with_sulfur():
    lines = [
        atom_line(1, "N", "MSE", "A", 1, (0.0, 0.0, 0.0), element="N", record="HETATM"),
        atom_line(2, "SE", "MSE", "A", 1, (1.0, 0.0, 0.0), element="SE", record="HETATM"),
        atom_line(3, "O", "HOH", "W", 1, (5.0, 0.0, 0.0), element="O", record="HETATM"),
    ]
    s = parse_pdb("\n".join(lines))
    (res,) = s.residues
    assert res.amino_acid == "MET"
    assert res.has_atom("SD")
    assert res.atoms[res.atom_position("SD")].element == "S"


def test_hydrogens_and_unknown_atoms_dropped():
    lines = [
        atom_line(1, "N", "GLY", "A", 1, (0.0, 0.0, 0.0), element="N"),
        atom_line(2, "H", "GLY", "A", 1, (0.5, 0.0, 0.0), element="H"),
        atom_line(3, "1HA", "GLY", "A", 1, (0.5, 0.5, 0.0), element=""),
        atom_line(4, "OXT", "GLY", "A", 1, (0.5, 0.5, 0.5), element="O"),
    ]
    s = parse_pdb("\n".join(lines))
    assert [a.atom_label for a in s.residues[0].atoms] == ["N"]


def test_altloc_highest_occupancy_then_first():
    lines = [
        atom_line(1, "N", "SER", "A", 1, (0.0, 0.0, 0.0), occ=0.4, altloc="A"),
        atom_line(2, "N", "SER", "A", 1, (9.0, 0.0, 0.0), occ=0.6, altloc="B"),
        atom_line(3, "CA", "SER", "A", 1, (1.0, 0.0, 0.0), occ=0.5, altloc="A"),
        atom_line(4, "CA", "SER", "A", 1, (8.0, 0.0, 0.0), occ=0.5, altloc="B"),
    ]
    res = parse_pdb("\n".join(lines)).residues[0]
    assert res.coord("N")[0] == 9.0  # higher occupancy
    assert res.coord("CA")[0] == 1.0  # tie keeps the first listed


def test_fixture_mse_and_altloc_resolved(corpus):
    by_id = {s.identifier: s for s in corpus}
    met = by_id["1sya"].residue("A:8")
    assert met.amino_acid == "MET" and met.complete
    assert met.atoms[met.atom_position("SD")].element == "S"
    ser = by_id["1syb"].residue("B:3")
    assert ser.coord("OG")[0] == pytest.approx(7.483)  # occupancy 0.60 beats 0.40
    assert all(a.element != "H" for s in corpus for r in s.residues for a in r.atoms)


def test_every_element_in_vocabulary(corpus):
    for s in corpus:
        assert set(s.atom_table.element) <= set(ELEMENTS)
        assert np.all(np.isfinite(s.atom_table.coords))


def test_chi_length_and_termini(corpus):
    for s in corpus:
        for chain in s.chains:
            assert chain.residues[0].phi is None
            assert chain.residues[-1].psi is None
            for r in chain.residues:
                assert len(r.chi) == CHI_COUNT[r.amino_acid]
                idx = [(x.residue_index, x.insertion_code) for x in chain.residues]
                assert idx == sorted(set(idx))


def test_parse_is_deterministic(fixtures_dir):
    path = fixtures_dir / "corpus" / "1syb.pdb"
    assert read_pdb(path) == read_pdb(path)


def test_round_trip_through_serializer(corpus):
    for s in corpus[:3]:
        again = parse_pdb(to_pdb(s), identifier=s.identifier)
        assert again == s


def test_header_metadata(corpus):
    by_id = {s.identifier: s for s in corpus}
    assert by_id["2low"].resolution == pytest.approx(2.10)
    assert by_id["2rfr"].r_value == pytest.approx(0.27)


def test_filter_thresholds():
    m = filter_dataset([StructureMetadata("a", 1.5, 0.20), StructureMetadata("b", 1.5, 0.30),
                        StructureMetadata("c", 1.9, 0.20)], val_fraction=0.0)
    assert m.ids("train") == ["a"]
    assert sorted(m.ids("excluded")) == ["b", "c"]


def test_filter_empty_and_missing_metadata():
    assert len(filter_dataset([])) == 0
    m = filter_dataset([StructureMetadata("a", None, 0.2), StructureMetadata("b", 1.0, 0.1)])
    assert m.dropped_missing_metadata == 1
    assert [e.identifier for e in m.entries] == ["b"]


def test_exclusion_ids_and_validation_split():
    metas = [StructureMetadata(f"s{i:04d}", 1.2, 0.18) for i in range(2000)]
    m = filter_dataset(metas, exclusion_ids={"s0001"}, seed=7)
    assert "s0001" in m.ids("excluded")
    train, val = set(m.ids("train")), set(m.ids("validation"))
    assert not train & val
    assert 0.03 < len(val) / 1999 < 0.07
    assert m == filter_dataset(metas, exclusion_ids={"s0001"}, seed=7)


def test_manifest_jsonl_round_trip(tmp_path):
    m = filter_dataset([StructureMetadata("a", 1.5, 0.2, "a.pdb"), StructureMetadata("b", 2.5, 0.2)],
                       val_fraction=0.0)
    m.write_jsonl(tmp_path / "m.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert {"id", "split", "resolution", "r_value"} <= set(rows[0])
    back = DatasetManifest.read_jsonl(tmp_path / "m.jsonl")
    assert back.ids("train") == ["a"]
    assert back.entries[0].path == str(tmp_path / "a.pdb")
