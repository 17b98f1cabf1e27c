"""Internal/Cartesian coordinate bridge: torsions, chi rebuilding, atom contexts, rotations."""

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ContextTooSmallError, ContractError, GeometryError, IncompleteResidueError
from .residues import AMINO_ACIDS, HEAVY_ATOMS

DEFAULT_K = 64
_DEGENERACY_TOL = 1e-10
_PEPTIDE_BREAK = 2.0  # Å; longer C(i-1)-N(i) distances are treated as chain breaks


def wrap_angle(angle):
    """Map degrees onto [-180, 180)."""
    wrapped = np.mod(np.asarray(angle, dtype=np.float64) + 180.0, 360.0) - 180.0
    # np.mod can return 360 - eps rounding to 360 for tiny negative inputs
    wrapped = np.where(wrapped >= 180.0, wrapped - 360.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def angle_diff(a, b):
    """Signed a - b on the circle, in [-180, 180)."""
    return wrap_angle(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))


def _dihedrals(p0, p1, p2, p3):
    """Vectorised torsion in degrees; no degeneracy checks."""
    b0 = p0 - p1
    b1 = p2 - p1
    b2 = p3 - p2
    b1 = b1 / np.linalg.norm(b1, axis=-1, keepdims=True)
    v = b0 - np.sum(b0 * b1, axis=-1, keepdims=True) * b1
    w = b2 - np.sum(b2 * b1, axis=-1, keepdims=True) * b1
    x = np.sum(v * w, axis=-1)
    y = np.sum(np.cross(b1, v) * w, axis=-1)
    return np.degrees(np.arctan2(y, x))


def dihedral(p0, p1, p2, p3):
    """Signed torsion angle about the p1-p2 bond, degrees in [-180, 180).

    Raises GeometryError if p0,p1,p2 or p1,p2,p3 are collinear.
    """
    p0, p1, p2, p3 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2, p3))
    b0, b1, b2 = p0 - p1, p2 - p1, p3 - p2
    n1 = np.linalg.norm(b1)
    if n1 < _DEGENERACY_TOL:
        raise GeometryError("coincident central atoms")
    for u in (b0, b2):
        nu = np.linalg.norm(u)
        if nu < _DEGENERACY_TOL or np.linalg.norm(np.cross(u, b1)) <= _DEGENERACY_TOL * nu * n1:
            raise GeometryError("collinear points in torsion")
    return wrap_angle(_dihedrals(p0, p1, p2, p3))


def backbone_torsions(chain):
    """(phi, psi) per residue of an ordered chain; None where undefined.

    Undefined at chain termini, next to chain breaks, and wherever a needed
    backbone atom is missing. ``chain`` is a Chain or a residue sequence.
    """
    chain = getattr(chain, "residues", chain)
    out = []
    n = len(chain)
    for i, res in enumerate(chain):
        phi = psi = None
        have = all(res.has_atom(a) for a in ("N", "CA", "C"))
        if have and i > 0:
            prev = chain[i - 1]
            if prev.has_atom("C") and _bonded(prev.coord("C"), res.coord("N")):
                phi = _safe_dihedral(prev.coord("C"), res.coord("N"), res.coord("CA"), res.coord("C"))
        if have and i < n - 1:
            nxt = chain[i + 1]
            if nxt.has_atom("N") and _bonded(res.coord("C"), nxt.coord("N")):
                psi = _safe_dihedral(res.coord("N"), res.coord("CA"), res.coord("C"), nxt.coord("N"))
        out.append((phi, psi))
    return out


def _bonded(a, b):
    return float(np.linalg.norm(a - b)) <= _PEPTIDE_BREAK


def _safe_dihedral(*points):
    try:
        return dihedral(*points)
    except GeometryError:
        return None


# ------------------------------------------------------------ chi definitions

@dataclass(frozen=True)
class ChiDefinition:
    atoms: tuple
    downstream: tuple


@dataclass(frozen=True)
class ChiDefinitionTable:
    version: int
    definitions: dict

    def for_residue(self, amino_acid):
        return self.definitions.get(amino_acid, ())

    def n_chi(self, amino_acid):
        return len(self.for_residue(amino_acid))

    @classmethod
    def parse(cls, text):
        version = None
        rows = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "version":
                    version = int(parts[1])
                continue
            try:
                aa, idx, a1, a2, a3, a4, downstream = line.split("\t")
            except ValueError:
                raise GeometryError(f"malformed chi table row {line!r}") from None
            rows.setdefault(aa, []).append((int(idx), (a1, a2, a3, a4), tuple(downstream.split(","))))
        if version is None:
            raise GeometryError("chi table missing version header")
        definitions = {}
        for aa, items in rows.items():
            items.sort()
            if [i for i, _, _ in items] != list(range(1, len(items) + 1)):
                raise GeometryError(f"chi indices for {aa} are not 1..n")
            defs = tuple(ChiDefinition(atoms, down) for _, atoms, down in items)
            for d in defs:
                if not set(d.atoms) | set(d.downstream) <= set(HEAVY_ATOMS[aa]):
                    raise GeometryError(f"non-canonical atom in chi table for {aa}")
            for outer, inner in zip(defs, defs[1:]):
                if not set(inner.downstream) < set(outer.downstream):
                    raise GeometryError(f"downstream sets for {aa} are not nested")
            definitions[aa] = defs
        for aa in AMINO_ACIDS:
            definitions.setdefault(aa, ())
        return cls(version=version, definitions=definitions)


@lru_cache(maxsize=1)
def default_chi_table():
    text = resources.files("rotamer_forge").joinpath("data/chi_definitions.v1.tsv").read_text()
    return ChiDefinitionTable.parse(text)


def native_chi(residue, table=None):
    """Chi angles of a residue as a tuple, None where atoms are missing."""
    table = table or default_chi_table()
    out = []
    for d in table.for_residue(residue.amino_acid):
        if all(residue.has_atom(a) for a in d.atoms):
            try:
                out.append(dihedral(*(residue.coord(a) for a in d.atoms)))
            except GeometryError:
                out.append(None)
        else:
            out.append(None)
    return tuple(out)


def extract_chi(residue, table=None):
    """Chi angles (degrees, [-180, 180)) in table order."""
    table = table or default_chi_table()
    values = []
    for i, d in enumerate(table.for_residue(residue.amino_acid)):
        missing = [a for a in d.atoms if not residue.has_atom(a)]
        if missing:
            raise IncompleteResidueError(
                f"{residue.amino_acid} {residue.uid}: chi{i + 1} needs missing atoms {missing}"
            )
        values.append(dihedral(*(residue.coord(a) for a in d.atoms)))
    return np.array(values, dtype=np.float64)


def _rotate_about_axis(points, origin, axis, angle_rad):
    """Rodrigues rotation of points (..., m, 3) about per-batch axes (..., 3)."""
    k = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    k = k[..., None, :]
    c = np.cos(angle_rad)[..., None, None]
    s = np.sin(angle_rad)[..., None, None]
    v = points - origin[..., None, :]
    rotated = v * c + np.cross(k, v) * s + k * np.sum(k * v, axis=-1, keepdims=True) * (1.0 - c)
    return rotated + origin[..., None, :]


def apply_chi_batch(residue, chis, table=None):
    """Rebuild the residue for each row of ``chis`` (n, n_chi).

    Returns (n, n_atoms, 3) coordinates in ``residue.atoms`` order. Each chi
    bond rotates only its downstream atoms, so bond lengths, bond angles and
    the backbone are untouched.
    """
    table = table or default_chi_table()
    defs = table.for_residue(residue.amino_acid)
    chis = np.asarray(chis, dtype=np.float64)
    if chis.ndim != 2 or chis.shape[1] != len(defs):
        raise ContractError(
            f"{residue.amino_acid} takes {len(defs)} chi angles, got shape {chis.shape}"
        )
    needed = {a for d in defs for a in d.atoms + d.downstream}
    missing = sorted(a for a in needed if not residue.has_atom(a))
    if missing:
        raise IncompleteResidueError(f"{residue.amino_acid} {residue.uid}: missing {missing}")
    coords = np.repeat(residue.coords[None], len(chis), axis=0)
    pos = residue.atom_position
    for i, d in enumerate(defs):
        a, b, c, e = (pos(x) for x in d.atoms)
        current = _dihedrals(coords[:, a], coords[:, b], coords[:, c], coords[:, e])
        delta = np.radians(angle_diff(chis[:, i], current))
        moving = [pos(x) for x in d.downstream]
        coords[:, moving] = _rotate_about_axis(
            coords[:, moving], coords[:, c], coords[:, c] - coords[:, b], np.atleast_1d(delta)
        )
    return coords


def apply_chi(residue, chi, table=None):
    """Residue coordinates (n_atoms, 3) with its chi angles set to ``chi``."""
    chi = np.atleast_1d(np.asarray(chi, dtype=np.float64))
    if chi.ndim != 1:
        raise ContractError("chi must be a 1-D array")
    return apply_chi_batch(residue, chi[None, :] if chi.size else np.zeros((1, 0)), table)[0]


# ---------------------------------------------------------------- contexts

@dataclass(frozen=True, eq=False)
class AtomContext:
    """k atoms nearest a residue's anchor; ``rotamer_mask`` flags that residue's side chain."""

    element: np.ndarray
    atom_label: np.ndarray
    amino_acid: np.ndarray
    coords: np.ndarray
    rotamer_mask: np.ndarray
    atom_index: np.ndarray
    residue_uid: str
    structure_id: str = ""

    @property
    def k(self):
        return len(self.coords)


def _center(structure, residue, center_atom, residue_coords):
    name = center_atom or residue.anchor_name
    if not residue.has_atom(name):
        raise IncompleteResidueError(f"{residue.uid} has no {name} atom")
    i = residue.atom_position(name)
    if residue_coords is not None:
        return np.asarray(residue_coords[..., i, :], dtype=np.float64)
    return residue.coords[i]


def _sort_keys(table, dist, idx):
    return np.lexsort((table.label_rank[idx], table.residue_rank[idx], table.chain_rank[idx], dist))


def _make_context(structure, table, slot, residue, idx, coords, uid):
    return AtomContext(
        element=table.element[idx],
        atom_label=table.atom_label[idx],
        amino_acid=table.amino_acid[idx],
        coords=coords,
        rotamer_mask=(table.residue_slot[idx] == slot) & table.is_side_chain[idx],
        atom_index=idx,
        residue_uid=uid,
        structure_id=structure.identifier,
    )


def knn_context(structure, residue, k=DEFAULT_K, residue_coords=None, center_atom=None):
    """The k atoms nearest the residue's CB (CA for glycine), own atoms included.

    ``residue_coords`` optionally replaces the residue's own coordinates (e.g.
    a rebuilt side chain). Distance ties go to (chain, residue, atom label)
    order, so the result does not depend on input atom order.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    if isinstance(residue, str):
        residue = structure.residue(residue)
    table = structure.atom_table
    if len(table) < k:
        raise ContextTooSmallError(f"{structure.identifier}: {len(table)} atoms < k={k}")
    slot = structure.slot_of(residue)
    coords = table.coords
    if residue_coords is not None:
        coords = coords.copy()
        lo, hi = table.residue_start[slot], table.residue_start[slot + 1]
        coords[lo:hi] = residue_coords
    center = _center(structure, residue, center_atom, residue_coords)
    dist = np.sqrt(np.sum((coords - center) ** 2, axis=-1))
    everything = np.arange(len(table))
    order = _sort_keys(table, dist, everything)[:k]
    return _make_context(structure, table, slot, residue, order, coords[order], residue.uid)


def knn_contexts(structure, residue, residue_coords_batch, k=DEFAULT_K, center_atom=None):
    """Batched :func:`knn_context` over many placements of one residue.

    Atoms of other residues never move, so only their k best candidates can
    enter any context; merging those with the moved residue gives the same
    answer as a full sort.
    """
    if isinstance(residue, str):
        residue = structure.residue(residue)
    table = structure.atom_table
    if len(table) < k:
        raise ContextTooSmallError(f"{structure.identifier}: {len(table)} atoms < k={k}")
    slot = structure.slot_of(residue)
    lo, hi = table.residue_start[slot], table.residue_start[slot + 1]
    others = np.concatenate([np.arange(lo), np.arange(hi, len(table))])
    own = np.arange(lo, hi)
    batch = np.asarray(residue_coords_batch, dtype=np.float64)
    contexts = []
    pre_center = None
    pre_top = None
    for placement in batch:
        center = _center(structure, residue, center_atom, placement)
        if pre_center is None or not np.array_equal(center, pre_center):
            d_other = np.sqrt(np.sum((table.coords[others] - center) ** 2, axis=-1))
            top = _sort_keys(table, d_other, others)[:k]
            pre_center, pre_top = center, (others[top], d_other[top])
        top_idx, top_dist = pre_top
        d_own = np.sqrt(np.sum((placement - center) ** 2, axis=-1))
        idx = np.concatenate([top_idx, own])
        dist = np.concatenate([top_dist, d_own])
        order = _sort_keys(table, dist, idx)[:k]
        chosen = idx[order]
        xyz = np.where(
            ((chosen >= lo) & (chosen < hi))[:, None],
            placement[np.clip(chosen - lo, 0, hi - lo - 1)],
            table.coords[chosen],
        )
        contexts.append(_make_context(structure, table, slot, residue, chosen, xyz, residue.uid))
    return contexts


# ---------------------------------------------------------------- rotations

@dataclass(frozen=True, eq=False)
class Rotation:
    matrix: np.ndarray

    def apply(self, coords):
        return np.asarray(coords) @ self.matrix.T

    @classmethod
    def identity(cls):
        return cls(np.eye(3))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _quaternions_to_matrices(q):
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def random_rotations(n, seed=None):
    """n rotations drawn uniformly (Haar) via normalised Gaussian quaternions."""
    rng = _as_rng(seed)
    return _quaternions_to_matrices(rng.standard_normal((n, 4)))


def random_rotation(seed=None):
    return Rotation(random_rotations(1, seed)[0])
