"""Amino-acid chemistry tables shared by every module."""

AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)

ONE_LETTER = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C",
    "GLN": "Q", "GLU": "E", "GLY": "G", "HIS": "H", "ILE": "I",
    "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F", "PRO": "P",
    "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
}
THREE_LETTER = {v: k for k, v in ONE_LETTER.items()}

ELEMENTS = ("C", "N", "O", "S")

BACKBONE_ATOMS = ("N", "CA", "C", "O")

# Side-chain heavy atoms, ordered along the chi kinematic chain.
SIDE_CHAIN_ATOMS = {
    "ALA": ("CB",),
    "ARG": ("CB", "CG", "CD", "NE", "CZ", "NH1", "NH2"),
    "ASN": ("CB", "CG", "OD1", "ND2"),
    "ASP": ("CB", "CG", "OD1", "OD2"),
    "CYS": ("CB", "SG"),
    "GLN": ("CB", "CG", "CD", "OE1", "NE2"),
    "GLU": ("CB", "CG", "CD", "OE1", "OE2"),
    "GLY": (),
    "HIS": ("CB", "CG", "ND1", "CD2", "CE1", "NE2"),
    "ILE": ("CB", "CG1", "CG2", "CD1"),
    "LEU": ("CB", "CG", "CD1", "CD2"),
    "LYS": ("CB", "CG", "CD", "CE", "NZ"),
    "MET": ("CB", "CG", "SD", "CE"),
    "PHE": ("CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"),
    "PRO": ("CB", "CG", "CD"),
    "SER": ("CB", "OG"),
    "THR": ("CB", "OG1", "CG2"),
    "TRP": ("CB", "CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2"),
    "TYR": ("CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ", "OH"),
    "VAL": ("CB", "CG1", "CG2"),
}

HEAVY_ATOMS = {aa: BACKBONE_ATOMS + sc for aa, sc in SIDE_CHAIN_ATOMS.items()}

# One shared ordinal vocabulary of heavy-atom names across residue types.
ATOM_LABELS = tuple(
    dict.fromkeys(
        name for aa in AMINO_ACIDS for name in HEAVY_ATOMS[aa]
    )
)

CHI_COUNT = {
    "ALA": 0, "ARG": 4, "ASN": 2, "ASP": 2, "CYS": 1, "GLN": 3, "GLU": 3,
    "GLY": 0, "HIS": 2, "ILE": 2, "LEU": 2, "LYS": 4, "MET": 3, "PHE": 2,
    "PRO": 2, "SER": 1, "THR": 1, "TRP": 2, "TYR": 2, "VAL": 1,
}

# Residue types scored in rotamer recovery (order of the per-residue report).
ROTAMERIC = (
    "ARG", "LYS", "MET", "ILE", "LEU", "SER", "THR", "VAL",
    "ASN", "ASP", "GLN", "GLU", "HIS", "TRP", "PHE", "TYR",
)

# 0-based chi index of terminal torsions that are symmetric under a 180° flip.
SYMMETRIC_CHI = {"ASP": 1, "PHE": 1, "TYR": 1, "GLU": 2}


def element_of(atom_name):
    """Element of a canonical heavy atom from its PDB name."""
    return atom_name[0]
