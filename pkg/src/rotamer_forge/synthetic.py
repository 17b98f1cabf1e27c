"""Idealized protein builder used for fixtures and as an independent geometry oracle.

Atoms are placed one at a time from ideal internal coordinates (bond length,
bond angle, torsion) with the natural-extension reference frame method. Helix
bundles and beta sandwiches are assembled from rigid ideal segments, and side
chains are packed against a soft repulsive score so that the resulting
"crystal" rotamers are physically plausible.

Run ``python -m rotamer_forge.synthetic OUT_DIR`` to regenerate the shipped
fixture corpus and miniature rotamer library.
"""

import argparse
import gzip
import math
from pathlib import Path

import numpy as np

from .residues import BACKBONE_ATOMS, CHI_COUNT, THREE_LETTER

# bond lengths (Å) and angles (degrees) of an ideal trans peptide
N_CA, CA_C, C_N, C_O = 1.458, 1.525, 1.329, 1.231
ANG_N_CA_C, ANG_CA_C_N, ANG_C_N_CA, ANG_CA_C_O = 111.2, 116.2, 121.7, 120.5
CB_BOND, ANG_N_CA_CB, TORS_N_C_CA_CB = 1.530, 110.5, 122.6


def place_atom(a, b, c, bond, angle, torsion):
    """Position d such that |cd| = bond, angle(b,c,d) = angle, dihedral(a,b,c,d) = torsion."""
    a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))
    angle, torsion = math.radians(angle), math.radians(torsion)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d_local = np.array([
        -bond * math.cos(angle),
        bond * math.sin(angle) * math.cos(torsion),
        bond * math.sin(angle) * math.sin(torsion),
    ])
    return c + d_local[0] * bc + d_local[1] * m + d_local[2] * n


# atom: (ref_a, ref_b, ref_c, bond, angle, torsion) with torsion either a float
# or ("chi", index, offset)
def _chi(i, offset=0.0):
    return ("chi", i, offset)


SIDE_CHAIN_GEOMETRY = {
    "ARG": [("CG", "N", "CA", "CB", 1.520, 114.1, _chi(0)),
            ("CD", "CA", "CB", "CG", 1.520, 111.5, _chi(1)),
            ("NE", "CB", "CG", "CD", 1.461, 112.0, _chi(2)),
            ("CZ", "CG", "CD", "NE", 1.329, 124.5, _chi(3)),
            ("NH1", "CD", "NE", "CZ", 1.326, 120.6, 0.0),
            ("NH2", "CD", "NE", "CZ", 1.326, 119.6, 180.0)],
    "ASN": [("CG", "N", "CA", "CB", 1.516, 112.6, _chi(0)),
            ("OD1", "CA", "CB", "CG", 1.231, 120.8, _chi(1)),
            ("ND2", "CA", "CB", "CG", 1.328, 116.4, _chi(1, 180.0))],
    "ASP": [("CG", "N", "CA", "CB", 1.516, 112.6, _chi(0)),
            ("OD1", "CA", "CB", "CG", 1.249, 119.2, _chi(1)),
            ("OD2", "CA", "CB", "CG", 1.249, 118.2, _chi(1, 180.0))],
    "CYS": [("SG", "N", "CA", "CB", 1.808, 113.8, _chi(0))],
    "GLN": [("CG", "N", "CA", "CB", 1.520, 114.1, _chi(0)),
            ("CD", "CA", "CB", "CG", 1.516, 112.6, _chi(1)),
            ("OE1", "CB", "CG", "CD", 1.231, 120.9, _chi(2)),
            ("NE2", "CB", "CG", "CD", 1.328, 116.5, _chi(2, 180.0))],
    "GLU": [("CG", "N", "CA", "CB", 1.520, 114.1, _chi(0)),
            ("CD", "CA", "CB", "CG", 1.516, 112.6, _chi(1)),
            ("OE1", "CB", "CG", "CD", 1.249, 119.0, _chi(2)),
            ("OE2", "CB", "CG", "CD", 1.249, 118.1, _chi(2, 180.0))],
    "HIS": [("CG", "N", "CA", "CB", 1.497, 113.7, _chi(0)),
            ("ND1", "CA", "CB", "CG", 1.378, 122.7, _chi(1)),
            ("CD2", "CA", "CB", "CG", 1.354, 131.0, _chi(1, 180.0)),
            ("CE1", "CB", "CG", "ND1", 1.321, 109.0, 180.0),
            ("NE2", "CB", "CG", "CD2", 1.374, 107.0, 180.0)],
    "ILE": [("CG1", "N", "CA", "CB", 1.527, 110.4, _chi(0)),
            ("CG2", "N", "CA", "CB", 1.527, 110.5, _chi(0, -122.9)),
            ("CD1", "CA", "CB", "CG1", 1.513, 113.8, _chi(1))],
    "LEU": [("CG", "N", "CA", "CB", 1.530, 116.1, _chi(0)),
            ("CD1", "CA", "CB", "CG", 1.521, 110.5, _chi(1)),
            ("CD2", "CA", "CB", "CG", 1.521, 110.5, _chi(1, 122.8))],
    "LYS": [("CG", "N", "CA", "CB", 1.520, 114.1, _chi(0)),
            ("CD", "CA", "CB", "CG", 1.520, 111.3, _chi(1)),
            ("CE", "CB", "CG", "CD", 1.520, 111.3, _chi(2)),
            ("NZ", "CG", "CD", "CE", 1.489, 111.9, _chi(3))],
    "MET": [("CG", "N", "CA", "CB", 1.520, 114.1, _chi(0)),
            ("SD", "CA", "CB", "CG", 1.807, 112.7, _chi(1)),
            ("CE", "CB", "CG", "SD", 1.791, 100.9, _chi(2))],
    "PHE": [("CG", "N", "CA", "CB", 1.502, 114.0, _chi(0)),
            ("CD1", "CA", "CB", "CG", 1.389, 120.7, _chi(1)),
            ("CD2", "CA", "CB", "CG", 1.389, 120.7, _chi(1, 180.0)),
            ("CE1", "CB", "CG", "CD1", 1.389, 120.7, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.389, 120.7, 180.0),
            ("CZ", "CG", "CD1", "CE1", 1.389, 120.0, 0.0)],
    "PRO": [("CG", "N", "CA", "CB", 1.495, 104.5, _chi(0)),
            ("CD", "CA", "CB", "CG", 1.507, 105.5, _chi(1))],
    "SER": [("OG", "N", "CA", "CB", 1.417, 111.1, _chi(0))],
    "THR": [("OG1", "N", "CA", "CB", 1.433, 109.2, _chi(0)),
            ("CG2", "N", "CA", "CB", 1.521, 111.1, _chi(0, -120.0))],
    "TRP": [("CG", "N", "CA", "CB", 1.498, 114.1, _chi(0)),
            ("CD1", "CA", "CB", "CG", 1.365, 127.1, _chi(1)),
            ("CD2", "CA", "CB", "CG", 1.433, 126.6, _chi(1, 180.0)),
            ("NE1", "CB", "CG", "CD1", 1.374, 110.2, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.409, 107.2, 180.0),
            ("CE3", "CB", "CG", "CD2", 1.398, 133.9, 0.0),
            ("CZ2", "CG", "CD2", "CE2", 1.394, 122.4, 180.0),
            ("CZ3", "CG", "CD2", "CE3", 1.382, 118.7, 180.0),
            ("CH2", "CD2", "CE2", "CZ2", 1.368, 117.5, 0.0)],
    "TYR": [("CG", "N", "CA", "CB", 1.512, 114.0, _chi(0)),
            ("CD1", "CA", "CB", "CG", 1.389, 120.8, _chi(1)),
            ("CD2", "CA", "CB", "CG", 1.389, 120.8, _chi(1, 180.0)),
            ("CE1", "CB", "CG", "CD1", 1.389, 121.2, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.389, 121.2, 180.0),
            ("CZ", "CG", "CD1", "CE1", 1.378, 119.6, 0.0),
            ("OH", "CD1", "CE1", "CZ", 1.376, 119.9, 180.0)],
    "VAL": [("CG1", "N", "CA", "CB", 1.527, 110.7, _chi(0)),
            ("CG2", "N", "CA", "CB", 1.527, 110.4, _chi(0, -122.9))],
}


def build_backbone(phis, psis, omegas=None):
    """Backbone atoms for a chain with the given torsions (degrees).

    phis[0] and psis[-1] are ignored (undefined at the termini). Returns a list
    of ``{"N", "CA", "C", "O"}`` coordinate dicts.
    """
    n = len(phis)
    omegas = [180.0] * n if omegas is None else omegas
    N = np.array([0.0, 0.0, 0.0])
    CA = np.array([N_CA, 0.0, 0.0])
    ang = math.radians(180.0 - ANG_N_CA_C)
    C = CA + CA_C * np.array([math.cos(ang), math.sin(ang), 0.0])
    residues = [{"N": N, "CA": CA, "C": C}]
    for i in range(1, n):
        prev = residues[-1]
        N = place_atom(prev["N"], prev["CA"], prev["C"], C_N, ANG_CA_C_N, psis[i - 1])
        CA = place_atom(prev["CA"], prev["C"], N, N_CA, ANG_C_N_CA, omegas[i - 1])
        C = place_atom(prev["C"], N, CA, CA_C, ANG_N_CA_C, phis[i])
        residues.append({"N": N, "CA": CA, "C": C})
    for i, res in enumerate(residues):
        psi = psis[i] if i < n - 1 else 120.0
        res["O"] = place_atom(res["N"], res["CA"], res["C"], C_O, ANG_CA_C_O, psi + 180.0)
    return residues


def build_side_chain(amino_acid, backbone, chi):
    """Heavy side-chain atoms for ``amino_acid`` on backbone ``{"N","CA","C",...}``."""
    atoms = {}
    if amino_acid == "GLY":
        return atoms
    if len(chi) != CHI_COUNT[amino_acid]:
        raise ValueError(f"{amino_acid} needs {CHI_COUNT[amino_acid]} chi values")
    atoms["CB"] = place_atom(backbone["N"], backbone["C"], backbone["CA"],
                             CB_BOND, ANG_N_CA_CB, TORS_N_C_CA_CB)
    frame = {**backbone, **atoms}
    for name, a, b, c, bond, angle, torsion in SIDE_CHAIN_GEOMETRY.get(amino_acid, ()):
        if isinstance(torsion, tuple):
            torsion = chi[torsion[1]] + torsion[2]
        frame[name] = atoms[name] = place_atom(frame[a], frame[b], frame[c], bond, angle, torsion)
    return atoms


def build_chain(sequence, phis, psis, chis):
    """Full heavy-atom residues as ``[(aa, {name: xyz})]``."""
    backbone = build_backbone(phis, psis)
    out = []
    for aa, bb, chi in zip(sequence, backbone, chis):
        atoms = {k: bb[k] for k in BACKBONE_ATOMS}
        atoms.update(build_side_chain(aa, bb, chi))
        out.append((aa, atoms))
    return out


# ---------------------------------------------------------- rotamer library

# chi1/chi2/... means for each synthetic rotamer, keyed by Dunbrack-style bin ids
_SP3 = {1: 62.0, 2: 180.0, 3: -65.0}
_LIBRARY_ROTAMERS = {
    "SER": [((1,), (64.0,)), ((2,), (178.0,)), ((3,), (-65.0,))],
    "THR": [((1,), (59.0,)), ((2,), (-172.0,)), ((3,), (-60.0,))],
    "VAL": [((1,), (63.0,)), ((2,), (175.0,)), ((3,), (-60.0,))],
    "CYS": [((1,), (60.0,)), ((2,), (-176.0,)), ((3,), (-64.0,))],
    "ILE": [((3, 2), (-64.0, 169.0)), ((3, 3), (-57.0, -61.0)), ((2, 2), (-172.0, 166.0)),
            ((1, 2), (62.0, 170.0))],
    "LEU": [((3, 2), (-67.0, 173.0)), ((2, 1), (-176.0, 65.0)), ((3, 1), (-85.0, 65.0)),
            ((1, 2), (60.0, 172.0))],
    "ASN": [((3, 1), (-68.0, -40.0)), ((2, 1), (-174.0, 30.0)), ((1, 1), (62.0, 0.0)),
            ((3, 2), (-65.0, 120.0))],
    "ASP": [((3, 1), (-70.0, -15.0)), ((2, 1), (-177.0, 65.0)), ((1, 1), (63.0, 2.0))],
    "HIS": [((3, 1), (-65.0, -70.0)), ((2, 1), (-175.0, 80.0)), ((3, 2), (-65.0, 100.0)),
            ((1, 1), (62.0, -75.0))],
    "TRP": [((3, 1), (-68.0, -90.0)), ((2, 1), (-178.0, 65.0)), ((3, 2), (-70.0, 100.0)),
            ((1, 1), (60.0, 90.0))],
    "PHE": [((3, 1), (-66.0, 98.0)), ((2, 1), (179.0, 78.0)), ((1, 1), (62.0, 90.0))],
    "TYR": [((3, 1), (-66.0, 96.0)), ((2, 1), (178.0, 77.0)), ((1, 1), (63.0, 89.0))],
    "MET": [((3, 3, 3), (-67.0, -61.0, -70.0)), ((2, 2, 3), (-176.0, 178.0, -72.0)),
            ((3, 2, 2), (-65.0, 178.0, 178.0)), ((2, 2, 1), (-177.0, 179.0, 71.0)),
            ((1, 2, 1), (62.0, 180.0, 73.0))],
    "GLN": [((3, 2, 1), (-66.0, 178.0, -27.0)), ((2, 2, 1), (-177.0, 178.0, 0.0)),
            ((3, 3, 1), (-66.0, -60.0, -40.0)), ((2, 1, 1), (-179.0, 65.0, 20.0)),
            ((1, 2, 1), (62.0, 180.0, 20.0))],
    "GLU": [((3, 2, 1), (-68.0, 179.0, -20.0)), ((2, 2, 1), (-176.0, 177.0, 2.0)),
            ((3, 3, 1), (-66.0, -62.0, -45.0)), ((2, 1, 1), (-178.0, 65.0, 8.0)),
            ((1, 2, 1), (63.0, 178.0, 10.0))],
    "LYS": [((3, 2, 2, 2), (-67.0, 178.0, 179.0, 179.0)), ((2, 2, 2, 2), (-177.0, 179.0, 179.0, 179.0)),
            ((3, 3, 2, 2), (-64.0, -68.0, 180.0, 178.0)), ((3, 2, 2, 3), (-68.0, 177.0, 178.0, -67.0)),
            ((1, 2, 2, 2), (62.0, 179.0, 178.0, 178.0))],
    "ARG": [((3, 2, 2, 2), (-67.0, 180.0, 180.0, 180.0)), ((2, 2, 2, 2), (-177.0, 178.0, 178.0, 176.0)),
            ((3, 3, 2, 2), (-65.0, -68.0, -175.0, -85.0)), ((3, 2, 3, 2), (-66.0, 178.0, -67.0, -90.0)),
            ((1, 2, 2, 2), (62.0, 180.0, 178.0, 176.0))],
    "PRO": [((1,), (30.0, -35.0)), ((2,), (-29.0, 38.0))],
}
_BASE_WEIGHTS = (0.50, 0.22, 0.14, 0.09, 0.05, 0.03)


def _rotamer_probs(n, phi, psi, aa_seed):
    """Smooth, bin-dependent mixture weights for n rotamers."""
    base = np.array(_BASE_WEIGHTS[:n]) if n <= len(_BASE_WEIGHTS) else np.ones(n)
    shift = np.array([
        0.35 * math.cos(math.radians(phi - 60.0 * (r + aa_seed)))
        + 0.25 * math.sin(math.radians(psi + 45.0 * r))
        for r in range(n)
    ])
    logits = np.log(base) + shift
    p = np.exp(logits - logits.max())
    return p / p.sum()


def library_lines(step=10):
    """Dunbrack-2010 style backbone-dependent rows for the synthetic library."""
    yield "# Synthetic backbone-dependent rotamer library (Dunbrack 2010 column layout)\n"
    yield ("# T  Phi  Psi  Count  r1 r2 r3 r4  Probabil  chi1Val chi2Val chi3Val chi4Val"
           "  chi1Sig chi2Sig chi3Sig chi4Sig\n")
    grid = range(-180, 181, step)
    for aa_i, (aa, rotamers) in enumerate(sorted(_LIBRARY_ROTAMERS.items())):
        n = len(rotamers)
        for phi in grid:
            for psi in grid:
                probs = _rotamer_probs(n, phi, psi, aa_i)
                probs = np.round(probs, 6)
                probs[0] += 1.0 - probs.sum()
                for (ids, means), p in zip(rotamers, probs):
                    ids = tuple(ids) + (0,) * (4 - len(ids))
                    nchi = CHI_COUNT[aa]
                    mu = [m + round(4.0 * math.sin(math.radians(phi + 30 * j)), 1)
                          for j, m in enumerate(means[:nchi])]
                    mu = [((v + 180.0) % 360.0) - 180.0 for v in mu] + [0.0] * (4 - nchi)
                    sig = [round(8.0 + 2.0 * j + 1.5 * math.cos(math.radians(psi)), 1)
                           for j in range(nchi)] + [0.0] * (4 - nchi)
                    yield (f"{aa} {phi:4d} {psi:4d} {100:6d} {ids[0]:2d} {ids[1]:2d} {ids[2]:2d} {ids[3]:2d} "
                           f"{p:9.6f} " + " ".join(f"{v:7.1f}" for v in mu) + " "
                           + " ".join(f"{v:6.1f}" for v in sig) + "\n")


def write_library(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt") as fh:
        fh.writelines(library_lines())


# -------------------------------------------------------------- assemblies

_CORE = "LIVFMLIVFLWY"
_SURFACE = "KERQSTDNEKHQSTRE"


def _heptad_sequence(n, rng):
    seq = []
    for i in range(n):
        pos = i % 7
        pool = _CORE if pos in (0, 3, 4) else _SURFACE
        seq.append(THREE_LETTER[pool[rng.integers(len(pool))]])
    return seq


def _ideal_segment(n, phi, psi, rng, jitter):
    phis = list(phi + rng.normal(0, jitter, n))
    psis = list(psi + rng.normal(0, jitter, n))
    return phis, psis


def _align_to_z(coords_list):
    """Rigid transform putting a segment's CA principal axis on z, centred at 0."""
    ca = np.array([c["CA"] for c in coords_list])
    centre = ca.mean(axis=0)
    _, _, vt = np.linalg.svd(ca - centre)
    axis = vt[0] if np.dot(vt[0], ca[-1] - ca[0]) > 0 else -vt[0]
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(axis, z)
    s, c = np.linalg.norm(v), float(np.dot(axis, z))
    if s < 1e-12:
        rot = np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        rot = np.eye(3) + vx + vx @ vx * ((1 - c) / s**2)
    return centre, rot


def _transform(res_atoms, centre, rot, spin, flip, offset):
    cz, sz = math.cos(spin), math.sin(spin)
    spin_m = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    flip_m = np.diag([1.0, -1.0, -1.0]) if flip else np.eye(3)
    m = flip_m @ spin_m @ rot
    return {k: m @ (v - centre) + offset for k, v in res_atoms.items()}


def _motif_layout(kind, rng):
    if kind == "bundle":
        # hexagonal close packing of helices: centre plus six neighbours
        spacing = 9.8
        offsets = [np.zeros(3)] + [
            spacing * np.array([math.cos(a), math.sin(a), 0.0])
            for a in np.radians(np.arange(0, 360, 60) + rng.uniform(0, 60))
        ]
        return offsets, (-62.0, -41.0), rng.integers(16, 21)
    # two stacked four-stranded sheets
    offsets = [np.array([4.8 * (i - 1.5), 0.0, 0.0]) + np.array([0.0, 10.0 * j - 5.0, 0.0])
               for j in range(2) for i in range(4)]
    return offsets, (-120.0, 130.0), rng.integers(9, 12)


def make_assembly(identifier, kind="bundle", seed=0, library=None, resolution=1.5, r_value=0.2):
    """Pack an idealized multi-chain assembly and return it as a Structure."""
    from .rotamers import parse_library
    from .structures import assemble_structure, make_residue

    rng = np.random.default_rng(seed)
    if library is None:
        library = parse_library(list(library_lines()))
    offsets, (phi0, psi0), length = _motif_layout(kind, rng)
    chains = []
    for ci, offset in enumerate(offsets):
        seq = _heptad_sequence(length, rng) if kind == "bundle" else [
            THREE_LETTER[("VIFYTLVW" if i % 2 == 0 else "KTSERQNT")[rng.integers(8)]]
            for i in range(length)
        ]
        for gly in rng.choice(length, size=max(1, length // 10), replace=False):
            seq[gly] = rng.choice(["GLY", "ALA", "PRO", "CYS"])
        phis, psis = _ideal_segment(length, phi0, psi0, rng, jitter=4.0)
        chains.append((seq, phis, psis, offset, ci))
    # place backbones
    placed = []
    for seq, phis, psis, offset, ci in chains:
        bb = build_backbone(phis, psis)
        centre, rot = _align_to_z(bb)
        spin = rng.uniform(0, 2 * math.pi)
        flip = (ci % 2 == 1)
        bb = [_transform(r, centre, rot, spin, flip, offset) for r in bb]
        placed.append((seq, bb))
    residues = _pack(placed, library, rng)
    by_chain = {}
    for ci, chain_residues in enumerate(residues):
        cid = "ABCDEFGHIJKLMNOP"[ci]
        by_chain[cid] = [make_residue(cid, i + 1, aa, atoms) for i, (aa, atoms) in enumerate(chain_residues)]
    return assemble_structure(identifier, by_chain, resolution=resolution, r_value=r_value)


def _clash(sc, env, cutoff=3.3):
    if len(env) == 0 or len(sc) == 0:
        return 0.0
    d = np.sqrt(((sc[:, None, :] - env[None, :, :]) ** 2).sum(-1))
    overlap = np.clip(cutoff - d, 0.0, None)
    contact = ((d > 3.3) & (d < 5.5)).sum()
    return float((overlap ** 2).sum() * 10.0 - 0.02 * contact)


def _pack(placed, library, rng, sweeps=3):
    """Greedy rotamer packing against a soft-sphere score with a library prior."""
    from .geometry import backbone_torsions
    from .rotamers import interpolate
    from .structures import make_residue

    state = []
    bb_atoms = []
    for ci, (seq, bb) in enumerate(placed):
        recs = [make_residue("A", i + 1, "GLY", {k: r[k] for k in BACKBONE_ATOMS}) for i, r in enumerate(bb)]
        torsions = backbone_torsions(recs)
        for i, (aa, r) in enumerate(zip(seq, bb)):
            phi, psi = torsions[i]
            phi = -62.0 if phi is None else phi
            psi = -41.0 if psi is None else psi
            options = []
            if CHI_COUNT[aa] and aa in _LIBRARY_ROTAMERS:
                comps = interpolate(library, aa, phi, psi)
                for comp in comps:
                    for d1 in (0.0, -1.0, 1.0):
                        chi = np.array(comp.chi_mean, dtype=float)
                        chi[0] += d1 * comp.chi_sigma[0]
                        options.append((chi, -math.log(max(comp.probability, 1e-6))))
            else:
                options.append((np.zeros(CHI_COUNT[aa]), 0.0))
            state.append({"chain": ci, "i": i, "aa": aa, "bb": r, "options": options, "choice": 0})
            bb_atoms.extend(r[k] for k in BACKBONE_ATOMS)
    bb_atoms = np.array(bb_atoms)

    def side(entry, chi):
        return build_side_chain(entry["aa"], entry["bb"], chi)

    current = [side(e, e["options"][0][0]) for e in state]
    for _ in range(sweeps):
        for idx in rng.permutation(len(state)):
            e = state[idx]
            if len(e["options"]) == 1:
                continue
            others = [v for j, sc in enumerate(current) if j != idx for v in sc.values()]
            env = np.concatenate([bb_atoms, np.array(others).reshape(-1, 3)])
            # drop the residue's own backbone from the environment
            own = np.array([e["bb"][k] for k in BACKBONE_ATOMS])
            keep = np.min(np.abs(env[:, None, :] - own[None]).sum(-1), axis=1) > 1e-9
            env = env[keep]
            best, best_score = 0, None
            for oi, (chi, prior) in enumerate(e["options"]):
                sc = side(e, chi)
                pts = np.array([v for n_, v in sc.items() if n_ != "CB"]).reshape(-1, 3)
                score = _clash(pts, env) + 0.6 * prior
                if best_score is None or score < best_score:
                    best, best_score = oi, score
            e["choice"] = best
            current[idx] = side(e, e["options"][best][0])
    out = [[] for _ in placed]
    for e, sc in zip(state, current):
        chi = e["options"][e["choice"]][0]
        if len(chi):
            chi = chi + rng.normal(0.0, 3.0, len(chi))
            sc = side(e, chi)
        atoms = {k: e["bb"][k] for k in BACKBONE_ATOMS}
        atoms.update(sc)
        out[e["chain"]].append((e["aa"], atoms))
    return out


def _decorate(text, rng, mse=False, water=True, altloc=False):
    """Add crystallographic noise the parser must cope with."""
    lines = text.splitlines()
    out = []
    done_alt = False
    for line in lines:
        if mse and line.startswith("ATOM") and line[17:20] == "MET":
            line = "HETATM" + line[6:17] + "MSE" + line[20:]
            if line[12:16] == " SD ":
                line = line[:12] + "SE  " + line[16:76] + "SE"
        if altloc and not done_alt and line.startswith("ATOM") and line[12:16] == " OG ":
            a = line[:16] + "A" + line[17:54] + "  0.60" + line[60:]
            b = line[:16] + "B" + line[17:30] + f"{float(line[30:38]) + 0.5:8.3f}" + line[38:54] + "  0.40" + line[60:]
            out.extend([a, b])
            done_alt = True
            continue
        if line.startswith("END"):
            if water:
                for w in range(3):
                    x, y, z = rng.uniform(-20, 20, 3)
                    out.append(f"HETATM{9000 + w:5d}  O   HOH W{w + 1:4d}    {x:8.3f}{y:8.3f}{z:8.3f}  1.00 30.00           O")
        out.append(line)
    return "\n".join(out) + "\n"


CORPUS = [
    # identifier, motif, seed, resolution, r_value, split hint
    ("1SYA", "bundle", 11, 1.45, 0.182),
    ("1SYB", "bundle", 12, 1.60, 0.201),
    ("1SYC", "sandwich", 13, 1.30, 0.170),
    ("1SYD", "bundle", 14, 1.72, 0.214),
    ("1SYE", "sandwich", 15, 1.55, 0.190),
    ("1SYF", "bundle", 16, 1.25, 0.160),
    ("2LOW", "bundle", 17, 2.10, 0.230),
    ("2RFR", "sandwich", 18, 1.50, 0.270),
]
TEST_CORPUS = [
    ("3TSA", "bundle", 21, 1.40, 0.190),
    ("3TSB", "sandwich", 22, 1.65, 0.205),
]


def write_corpus(out_dir):
    """Write the fixture corpus (PDB files) and the miniature rotamer library."""
    from .rotamers import parse_library
    from .structures import to_pdb

    out_dir = Path(out_dir)
    (out_dir / "corpus").mkdir(parents=True, exist_ok=True)
    (out_dir / "test_corpus").mkdir(parents=True, exist_ok=True)
    lib_path = out_dir / "mini_rotamer_library.bbdep.lib.gz"
    write_library(lib_path)
    library = parse_library(lib_path)
    rng = np.random.default_rng(0)
    for sub, entries in (("corpus", CORPUS), ("test_corpus", TEST_CORPUS)):
        for i, (ident, kind, seed, res, rv) in enumerate(entries):
            s = make_assembly(ident, kind, seed=seed, library=library, resolution=res, r_value=rv)
            text = _decorate(to_pdb(s), rng, mse=(i == 0), altloc=(i == 1))
            (out_dir / sub / f"{ident.lower()}.pdb").write_text(text)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    args = ap.parse_args(argv)
    write_corpus(args.out_dir)


if __name__ == "__main__":
    main()
