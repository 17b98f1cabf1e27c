"""Crystal-structure records, PDB ingestion, and corpus curation."""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import PDBParseError
from .residues import (
    ATOM_LABELS,
    BACKBONE_ATOMS,
    ELEMENTS,
    HEAVY_ATOMS,
)

log = logging.getLogger(__name__)

_LABEL_RANK = {name: i for i, name in enumerate(ATOM_LABELS)}


@dataclass(frozen=True)
class AtomRecord:
    atom_label: str
    element: str
    coords: tuple
    residue_index: int
    amino_acid: str
    chain_id: str


@dataclass(frozen=True)
class ResidueRecord:
    chain_id: str
    residue_index: int
    insertion_code: str
    amino_acid: str
    atoms: tuple
    phi: Optional[float]
    psi: Optional[float]
    chi: tuple
    complete: bool

    @property
    def uid(self):
        return f"{self.chain_id}:{self.residue_index}{self.insertion_code}"

    @cached_property
    def atom_names(self):
        return tuple(a.atom_label for a in self.atoms)

    @cached_property
    def _name_index(self):
        return {name: i for i, name in enumerate(self.atom_names)}

    def has_atom(self, name):
        return name in self._name_index

    def atom_position(self, name):
        """Index of ``name`` within ``atoms`` (KeyError if absent)."""
        return self._name_index[name]

    def coord(self, name):
        return np.array(self.atoms[self._name_index[name]].coords, dtype=np.float64)

    @cached_property
    def coords(self):
        return np.array([a.coords for a in self.atoms], dtype=np.float64).reshape(-1, 3)

    @property
    def side_chain_names(self):
        return tuple(n for n in self.atom_names if n not in BACKBONE_ATOMS)

    @property
    def anchor_name(self):
        """Atom used as context centre and burial anchor: CB, or CA for glycine."""
        if self.amino_acid != "GLY" and self.has_atom("CB"):
            return "CB"
        return "CA"


@dataclass(frozen=True)
class Chain:
    chain_id: str
    residues: tuple


@dataclass(frozen=True, eq=False)
class AtomTable:
    """Flat per-atom arrays over a whole structure, in (chain, residue, label) order."""

    coords: np.ndarray
    element: np.ndarray
    atom_label: np.ndarray
    amino_acid: np.ndarray
    label_rank: np.ndarray
    chain_rank: np.ndarray
    residue_rank: np.ndarray
    residue_slot: np.ndarray
    is_side_chain: np.ndarray
    residue_start: np.ndarray

    def __len__(self):
        return len(self.coords)


@dataclass(frozen=True)
class Structure:
    identifier: str
    resolution: Optional[float]
    r_value: Optional[float]
    chains: tuple

    def __post_init__(self):
        for chain in self.chains:
            keys = [(r.residue_index, r.insertion_code) for r in chain.residues]
            if any(a >= b for a, b in zip(keys, keys[1:])):
                raise ValueError(f"residue indices not strictly increasing in chain {chain.chain_id}")

    @cached_property
    def residues(self):
        return tuple(r for c in self.chains for r in c.residues)

    @cached_property
    def _slot_by_uid(self):
        return {r.uid: i for i, r in enumerate(self.residues)}

    def residue(self, uid):
        return self.residues[self._slot_by_uid[uid]]

    def slot_of(self, residue):
        if isinstance(residue, str):
            return self._slot_by_uid[residue]
        return self._slot_by_uid[residue.uid]

    @property
    def n_atoms(self):
        return len(self.atom_table)

    @cached_property
    def atom_table(self):
        chain_order = {cid: i for i, cid in enumerate(sorted(c.chain_id for c in self.chains))}
        rows = []
        starts = [0]
        for slot, res in enumerate(self.residues):
            for atom in res.atoms:
                rows.append((atom, slot))
            starts.append(len(rows))
        rank_in_chain = {}
        for chain in self.chains:
            for i, res in enumerate(chain.residues):
                rank_in_chain[res.uid] = i
        n = len(rows)
        coords = np.array([a.coords for a, _ in rows], dtype=np.float64).reshape(n, 3)
        residues = self.residues
        return AtomTable(
            coords=coords,
            element=np.array([a.element for a, _ in rows], dtype="<U1"),
            atom_label=np.array([a.atom_label for a, _ in rows], dtype="<U4"),
            amino_acid=np.array([a.amino_acid for a, _ in rows], dtype="<U3"),
            label_rank=np.array([_LABEL_RANK[a.atom_label] for a, _ in rows], dtype=np.int64),
            chain_rank=np.array([chain_order[a.chain_id] for a, _ in rows], dtype=np.int64),
            residue_rank=np.array([rank_in_chain[residues[s].uid] for _, s in rows], dtype=np.int64),
            residue_slot=np.array([s for _, s in rows], dtype=np.int64),
            is_side_chain=np.array([a.atom_label not in BACKBONE_ATOMS for a, _ in rows], dtype=bool),
            residue_start=np.array(starts, dtype=np.int64),
        )


def make_residue(chain_id, residue_index, amino_acid, atoms, insertion_code="",
                 phi=None, psi=None):
    """Build a ResidueRecord from ``{name: xyz}``; atoms are put in canonical order.

    Torsions are filled in later by :func:`assemble_structure`.
    """
    canonical = HEAVY_ATOMS[amino_acid]
    records = tuple(
        AtomRecord(
            atom_label=name,
            element=name[0],
            coords=tuple(float(v) for v in atoms[name]),
            residue_index=residue_index,
            amino_acid=amino_acid,
            chain_id=chain_id,
        )
        for name in canonical
        if name in atoms
    )
    complete = all(name in atoms for name in canonical)
    return ResidueRecord(
        chain_id=chain_id,
        residue_index=residue_index,
        insertion_code=insertion_code,
        amino_acid=amino_acid,
        atoms=records,
        phi=phi,
        psi=psi,
        chi=(),
        complete=complete,
    )


def assemble_structure(identifier, chains, resolution=None, r_value=None):
    """Compute backbone torsions and chi angles, then freeze into a Structure.

    ``chains`` maps chain id to a list of ResidueRecords (torsions ignored).
    """
    from .geometry import backbone_torsions, native_chi

    built = []
    for chain_id, residues in chains.items():
        residues = sorted(residues, key=lambda r: (r.residue_index, r.insertion_code))
        torsions = backbone_torsions(residues)
        out = []
        for res, (phi, psi) in zip(residues, torsions):
            out.append(ResidueRecord(
                chain_id=res.chain_id,
                residue_index=res.residue_index,
                insertion_code=res.insertion_code,
                amino_acid=res.amino_acid,
                atoms=res.atoms,
                phi=phi,
                psi=psi,
                chi=native_chi(res),
                complete=res.complete,
            ))
        built.append(Chain(chain_id=chain_id, residues=tuple(out)))
    return Structure(identifier=identifier, resolution=resolution, r_value=r_value,
                     chains=tuple(built))


# --------------------------------------------------------------------------- PDB

_RESOLUTION_RE = re.compile(r"^REMARK   2 RESOLUTION\.\s+([0-9.]+)")
_RWORK_RE = re.compile(r"R VALUE\s+\(WORKING SET\)\s*:\s*([0-9.]+)")
_RALL_RE = re.compile(r"R VALUE\s+\(WORKING \+ TEST SET\)\s*:\s*([0-9.]+)")


def _element(name_field, element_field):
    element = element_field.strip().upper()
    if element:
        return element
    stripped = name_field.strip().lstrip("0123456789")
    return stripped[:1].upper()


def parse_pdb(text, identifier=None):
    """Parse PDB-format text into a Structure.

    Only the first MODEL is read. Hydrogens, waters, ligands and non-canonical
    residues are dropped; MSE becomes MET with its selenium relabelled as SD/S.
    Alternate locations keep the highest-occupancy copy of each atom (first
    listed wins ties).
    """
    if not text or not text.strip():
        raise PDBParseError("empty input")

    resolution = None
    r_work = None
    r_all = None
    header_id = None
    # (chain, resseq, icode) -> {"aa": str, "atoms": {name: (occ, xyz)}}
    residues = {}
    order = []
    n_records = 0

    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[:6]
        if record.startswith("HEADER") and len(line) >= 66:
            header_id = line[62:66].strip() or header_id
            continue
        if record.startswith("REMARK"):
            m = _RESOLUTION_RE.match(line)
            if m:
                resolution = _float_or_none(m.group(1))
                continue
            m = _RWORK_RE.search(line)
            if m:
                r_work = _float_or_none(m.group(1))
                continue
            m = _RALL_RE.search(line)
            if m:
                r_all = _float_or_none(m.group(1))
            continue
        if record.startswith("ENDMDL"):
            break
        if not (record == "ATOM  " or record == "HETATM"):
            continue
        n_records += 1
        if len(line) < 54:
            raise PDBParseError("coordinate record too short", lineno)
        resname = line[17:20].strip()
        if record == "HETATM" and resname != "MSE":
            continue
        if resname == "MSE":
            resname = "MET"
        if resname not in HEAVY_ATOMS:
            continue
        name_field = line[12:16]
        name = name_field.strip()
        element = _element(name_field, line[76:78] if len(line) >= 78 else "")
        if name == "SE" and resname == "MET":
            name, element = "SD", "S"
        if element in ("H", "D"):
            continue
        try:
            x = float(line[30:38])
            y = float(line[38:46])
            z = float(line[46:54])
        except ValueError:
            raise PDBParseError(f"malformed coordinate field {line[30:54]!r}", lineno) from None
        if not all(math.isfinite(v) for v in (x, y, z)):
            raise PDBParseError("non-finite coordinate", lineno)
        if element not in ELEMENTS or name not in HEAVY_ATOMS[resname]:
            continue
        try:
            occupancy = float(line[54:60]) if line[54:60].strip() else 1.0
            resseq = int(line[22:26])
        except ValueError:
            raise PDBParseError("malformed occupancy or residue number", lineno) from None
        key = (line[21], resseq, line[26] if len(line) > 26 else " ")
        entry = residues.get(key)
        if entry is None:
            entry = {"aa": resname, "atoms": {}}
            residues[key] = entry
            order.append(key)
        elif entry["aa"] != resname:
            # point mutation modelled as altloc residue; keep the first type
            continue
        prev = entry["atoms"].get(name)
        if prev is None or occupancy > prev[0]:
            entry["atoms"][name] = (occupancy, (x, y, z))

    if n_records == 0:
        raise PDBParseError("no ATOM/HETATM records")

    chains = {}
    for key in order:
        chain_id, resseq, icode = key
        entry = residues[key]
        atoms = {name: xyz for name, (_, xyz) in entry["atoms"].items()}
        chains.setdefault(chain_id.strip() or "_", []).append(
            make_residue(chain_id.strip() or "_", resseq, entry["aa"], atoms,
                         insertion_code=icode.strip())
        )
    return assemble_structure(
        identifier or header_id or "UNKNOWN",
        chains,
        resolution=resolution,
        r_value=r_work if r_work is not None else r_all,
    )


def _float_or_none(text):
    try:
        return float(text)
    except ValueError:
        return None


def read_pdb(path, identifier=None):
    path = Path(path)
    return parse_pdb(path.read_text(), identifier=identifier or path.stem)


def to_pdb(structure):
    """Serialize a Structure back to PDB text that :func:`parse_pdb` reads identically."""
    lines = [f"HEADER    {'':40}{'':12}{structure.identifier[:4]:<4}"]
    lines.append(f"REMARK   1 ID {structure.identifier}")
    if structure.resolution is not None:
        lines.append(f"REMARK   2 RESOLUTION.    {structure.resolution!r} ANGSTROMS.")
    if structure.r_value is not None:
        lines.append(f"REMARK   3   R VALUE            (WORKING SET) : {structure.r_value!r}")
    serial = 1
    for chain in structure.chains:
        for res in chain.residues:
            for atom in res.atoms:
                name = atom.atom_label
                name_field = f" {name:<3}" if len(name) < 4 else name
                x, y, z = atom.coords
                lines.append(
                    f"ATOM  {serial:5d} {name_field} {res.amino_acid:>3} {chain.chain_id[:1]}"
                    f"{res.residue_index:4d}{res.insertion_code or ' ':1}   "
                    f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}          {atom.element:>2}"
                )
                serial += 1
        lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ curation

@dataclass(frozen=True)
class ManifestEntry:
    identifier: str
    split: str
    resolution: Optional[float]
    r_value: Optional[float]
    path: Optional[str] = None
    reasons: tuple = ()

    def to_json(self):
        return {
            "id": self.identifier,
            "split": self.split,
            "resolution": self.resolution,
            "r_value": self.r_value,
            "path": self.path,
            "reasons": list(self.reasons),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            identifier=obj["id"],
            split=obj["split"],
            resolution=obj.get("resolution"),
            r_value=obj.get("r_value"),
            path=obj.get("path"),
            reasons=tuple(obj.get("reasons", ())),
        )


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple = ()
    dropped_missing_metadata: int = 0

    SPLITS = ("train", "validation", "test", "excluded")

    def ids(self, split):
        return [e.identifier for e in self.entries if e.split == split]

    def select(self, *splits):
        return [e for e in self.entries if e.split in splits]

    def __len__(self):
        return len(self.entries)

    def write_jsonl(self, path):
        path = Path(path)
        with path.open("w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        path = Path(path)
        entries = []
        for line in path.read_text().splitlines():
            if line.strip():
                entry = ManifestEntry.from_json(json.loads(line))
                if entry.path and not Path(entry.path).is_absolute():
                    entry = ManifestEntry(**{**entry.__dict__, "path": str(path.parent / entry.path)})
                entries.append(entry)
        return cls(entries=tuple(entries))


@dataclass(frozen=True)
class StructureMetadata:
    identifier: str
    resolution: Optional[float]
    r_value: Optional[float]
    path: Optional[str] = None


def _hash_unit(identifier, seed):
    digest = hashlib.sha256(f"{seed}:{identifier}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def filter_dataset(structures: Iterable, exclusion_ids=(), resolution_max=1.8,
                   rvalue_max=0.25, val_fraction=0.05, seed=0, split="train"):
    """Apply resolution / R-value / exclusion filters and assign splits.

    ``structures`` are Structure or StructureMetadata values (anything with
    ``identifier``, ``resolution`` and ``r_value``). Kept entries go to
    ``split``; when that is ``"train"`` a seeded hash of the identifier sends
    roughly ``val_fraction`` of them to ``"validation"``.
    """
    excluded_ids = set(exclusion_ids)
    entries = []
    missing = 0
    for s in structures:
        path = getattr(s, "path", None)
        if s.resolution is None or s.r_value is None:
            missing += 1
            continue
        reasons = []
        if not s.resolution < resolution_max:
            reasons.append(f"resolution {s.resolution} >= {resolution_max}")
        if not s.r_value < rvalue_max:
            reasons.append(f"r_value {s.r_value} >= {rvalue_max}")
        if s.identifier in excluded_ids:
            reasons.append("excluded by id list")
        if reasons:
            tag = "excluded"
        elif split == "train" and _hash_unit(s.identifier, seed) < val_fraction:
            tag = "validation"
        else:
            tag = split
        entries.append(ManifestEntry(s.identifier, tag, s.resolution, s.r_value,
                                     path=str(path) if path else None, reasons=tuple(reasons)))
    if missing:
        log.warning("dropped %d entries with missing resolution/R-value", missing)
    return DatasetManifest(entries=tuple(entries), dropped_missing_metadata=missing)
