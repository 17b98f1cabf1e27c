"""Model introspection: chi energy scans, coordinate saliency, context embeddings."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .evaluation import BurialClass, burial_counts, residue_rng
from .geometry import apply_chi_batch, knn_context, knn_contexts, random_rotations
from .model import collate, context_embedding, featurize
from .residues import ATOM_LABELS, ELEMENTS


@dataclass(frozen=True, eq=False)
class EnergyScan:
    residue_uid: str
    chi_index: int
    offsets: np.ndarray
    energies: np.ndarray
    n_rotations: int

    def symmetry_gap(self):
        """mean |E(o) - E(o + 180)| as a fraction of the curve's peak-to-peak range."""
        n = len(self.offsets)
        if n % 2:
            raise ContractError("grid must contain o + 180 for every offset")
        amp = np.ptp(self.energies)
        if amp == 0:
            return 0.0
        return float(np.mean(np.abs(self.energies - np.roll(self.energies, n // 2))) / amp)


def scan_grid(step):
    if step <= 0 or 360 % step:
        raise ContractError("step must divide 360")
    return np.arange(-180.0, 180.0, step)


def chi_scan(scorer, structure, residue, chi_index, step=10.0, n_rotations=100, seed=0, k=None):
    """Energy as one chi angle is swept around the circle; others stay native.

    All offsets are scored under the same ``n_rotations`` random rotations.
    """
    if isinstance(residue, str):
        residue = structure.residue(residue)
    native = np.asarray(residue.chi, dtype=np.float64)
    if not 0 <= chi_index < len(native):
        raise ContractError(f"{residue.amino_acid} has {len(native)} chi angles")
    offsets = scan_grid(step)
    chis = np.repeat(native[None], len(offsets), axis=0)
    chis[:, chi_index] = native[chi_index] + offsets
    rng = residue_rng(seed, structure.identifier, residue.uid)
    rotations = random_rotations(n_rotations, rng)
    kwargs = {} if k is None else {"k": k}
    contexts = knn_contexts(structure, residue, apply_chi_batch(residue, chis), **kwargs)
    energies = np.asarray(scorer(structure, residue, chis, contexts, rotations), dtype=np.float64)
    if not np.all(np.isfinite(energies)):
        raise NumericError(f"non-finite scan energy for {residue.uid}")
    return EnergyScan(residue.uid, chi_index, offsets, energies, n_rotations)


def aggregate_scans(scans):
    """Mean of the per-residue curves after subtracting each curve's own mean."""
    scans = list(scans)
    if not scans:
        raise ContractError("no scans to aggregate")
    offsets = scans[0].offsets
    if any(not np.array_equal(s.offsets, offsets) for s in scans):
        raise ContractError("scans use different grids")
    centred = np.stack([s.energies - s.energies.mean() for s in scans])
    return offsets, centred.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    context_id: str
    magnitudes: np.ndarray
    element: np.ndarray
    atom_label: np.ndarray


def saliency(model, fc):
    """Per-atom L2 norm of dE/dcoords for one featurized context."""
    element, label, aa, coords = collate([fc], next(model.parameters()).dtype)
    coords.requires_grad_(True)
    model.zero_grad(set_to_none=True)
    model(element, label, aa, coords).sum().backward()
    grad = coords.grad[0].detach().double().numpy()
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for {fc.context_id}")
    return SaliencyMap(fc.context_id, np.linalg.norm(grad, axis=-1), fc.element, fc.atom_label)


@dataclass(frozen=True, eq=False)
class ContextEmbedding:
    residue_uid: str
    vector: np.ndarray
    burial: str


def embed_contexts(model, structure, residues=None):
    """Pooled hidden vector of every residue's context, identity rotation."""
    counts = burial_counts(structure)
    out = []
    for r in residues if residues is not None else structure.residues:
        if not r.has_atom(r.anchor_name) or structure.n_atoms < model.config.k:
            continue
        fc = featurize(knn_context(structure, r, k=model.config.k))
        out.append(ContextEmbedding(r.uid, context_embedding(model, fc),
                                    BurialClass.from_count(counts[r.uid]).label))
    return out


# ------------------------------------------------------------------ writers

def write_scan_csv(path, scans):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["residue", "chi_index", "offset_deg", "mean_energy"])
        for s in scans:
            for o, e in zip(s.offsets, s.energies):
                w.writerow([s.residue_uid, s.chi_index + 1, f"{o:g}", f"{e:.8g}"])


def write_scan_aggregate_csv(path, offsets, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["offset_deg", "mean_centered_energy"])
        for o, e in zip(offsets, curve):
            w.writerow([f"{o:g}", f"{e:.8g}"])


def write_saliency_csv(path, smap):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["atom_index", "element", "label", "magnitude"])
        for i, (e, l, m) in enumerate(zip(smap.element, smap.atom_label, smap.magnitudes)):
            w.writerow([i, ELEMENTS[e], ATOM_LABELS[l], f"{m:.8g}"])


def write_embeddings_csv(path, embeddings):
    width = len(embeddings[0].vector) if embeddings else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["residue_id", "burial"] + [f"v{i}" for i in range(width)])
        for emb in embeddings:
            w.writerow([emb.residue_uid, emb.burial] + [f"{v:.8g}" for v in emb.vector])
