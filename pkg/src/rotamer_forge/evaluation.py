"""Rotamer-recovery benchmark.

For every rotameric residue a candidate set is built (discrete rotamer
trials or continuous library draws), each candidate side chain is placed
with apply_chi, its k-atom context is re-extracted and scored, and the
lowest-energy candidate is compared to the native chi angles. The native
side chain itself is never a candidate.
"""

import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, EmptyReportError, GeometryError, SamplerError
from .geometry import DEFAULT_K, angle_diff, apply_chi_batch, knn_contexts, random_rotations
from .model import energy_batch, featurize
from .residues import ROTAMERIC, SYMMETRIC_CHI
from .rotamers import candidates_discrete, sample_continuous
from .training import eligible

BURIED_MIN = 24
SURFACE_MAX = 16
BURIAL_RADIUS = 10.0
RECOVERY_THRESHOLD = 20.0


@dataclass(frozen=True)
class BurialClass:
    label: str
    neighbors: int

    @classmethod
    def from_count(cls, n):
        if n >= BURIED_MIN:
            return cls("buried", n)
        if n <= SURFACE_MAX:
            return cls("surface", n)
        return cls("intermediate", n)


def anchor_coords(structure):
    """CB (CA for glycine or a missing CB) of every residue, in residue order."""
    out = np.full((len(structure.residues), 3), np.nan)
    for i, r in enumerate(structure.residues):
        if r.has_atom(r.anchor_name):
            out[i] = r.coord(r.anchor_name)
    return out


def burial_counts(structure, radius=BURIAL_RADIUS):
    """Neighbour count within ``radius`` for every residue (self excluded)."""
    xyz = anchor_coords(structure)
    d = np.sqrt(np.sum((xyz[:, None, :] - xyz[None, :, :]) ** 2, axis=-1))
    close = np.nan_to_num(d, nan=np.inf) <= radius
    np.fill_diagonal(close, False)
    counts = close.sum(axis=1)
    return {r.uid: int(c) for r, c in zip(structure.residues, counts)}


def classify_burial(structure, residue, radius=BURIAL_RADIUS):
    uid = residue if isinstance(residue, str) else residue.uid
    return BurialClass.from_count(burial_counts(structure, radius)[uid])


def chi_deviation(chi_pred, chi_true, aa, symmetric=True):
    """Per-angle absolute deviation in degrees, folding symmetric terminal chi by 180."""
    pred = np.atleast_1d(np.asarray(chi_pred, dtype=np.float64))
    true = np.atleast_1d(np.asarray(chi_true, dtype=np.float64))
    if pred.shape[-1] != true.shape[-1]:
        raise ContractError(f"chi length mismatch: {pred.shape[-1]} vs {true.shape[-1]}")
    dev = np.abs(angle_diff(pred, true))
    sym = SYMMETRIC_CHI.get(aa)
    if symmetric and sym is not None and sym < dev.shape[-1]:
        dev[..., sym] = np.minimum(dev[..., sym], 180.0 - dev[..., sym])
    return dev


def is_recovered(chi_pred, chi_true, aa, symmetric=True, threshold=RECOVERY_THRESHOLD):
    """True when every chi lies within ``threshold`` degrees of the native value."""
    return bool(np.all(chi_deviation(chi_pred, chi_true, aa, symmetric) <= threshold))


# ------------------------------------------------------------------ scorers

class ModelScorer:
    """Scores candidates with one model or the mean of an ensemble."""

    def __init__(self, models):
        self.models = list(models) if isinstance(models, (list, tuple)) else [models]
        if not self.models:
            raise ContractError("scorer needs at least one model")

    def __call__(self, structure, residue, chis, contexts, rotations):
        base = [featurize(c) for c in contexts]
        fcs = [
            type(f)(f.element, f.atom_label, f.amino_acid, f.coords @ rot.T, f.context_id)
            for rot in rotations for f in base
        ]
        per_model = [np.asarray(energy_batch(m, fcs)).reshape(len(rotations), len(contexts))
                     for m in self.models]
        return np.mean(per_model, axis=(0, 1))


class ChiDistanceOracle:
    """Energy = largest per-angle deviation from the native chi (lower is closer).

    Using the worst angle means the argmin is recovered whenever any candidate
    is within the recovery threshold.
    """

    def __init__(self, symmetric=True):
        self.symmetric = symmetric

    def __call__(self, structure, residue, chis, contexts, rotations):
        return chi_deviation(chis, residue.chi, residue.amino_acid, self.symmetric).max(axis=-1)


class ConstantOracle:
    def __init__(self, value=0.0):
        self.value = value

    def __call__(self, structure, residue, chis, contexts, rotations):
        return np.full(len(chis), float(self.value))


# ---------------------------------------------------------------- protocols

@dataclass(frozen=True)
class EvalOptions:
    protocol: str = "discrete"
    eval_samples: int = 1000
    n_rotations: int = 10
    rotation_average: bool = True
    seed: int = 0
    symmetric: bool = True
    k: int = DEFAULT_K

    def validate(self):
        if self.protocol not in ("discrete", "continuous"):
            raise ContractError(f"unknown protocol {self.protocol!r}")
        if self.eval_samples < 1 or self.n_rotations < 1:
            raise ContractError("eval_samples and n_rotations must be >= 1")
        return self


@dataclass(frozen=True)
class ResidueResult:
    structure_id: str
    residue_uid: str
    amino_acid: str
    burial: str
    neighbors: int
    n_candidates: int = 0
    chosen_chi: tuple = ()
    native_chi: tuple = ()
    recovered: bool = False
    recovered_strict: bool = False
    energy: float = float("nan")
    skip_reason: str = None

    @property
    def skipped(self):
        return self.skip_reason is not None


def residue_rng(seed, structure_id, uid):
    """Per-residue stream, independent of evaluation order."""
    return np.random.default_rng([seed, zlib.crc32(f"{structure_id}/{uid}".encode())])


def _candidates(lib, residue, burial, opts, rng):
    if opts.protocol == "discrete":
        cands = candidates_discrete(lib, residue.amino_acid, residue.phi, residue.psi,
                                    burial.label == "buried")
    else:
        cands = sample_continuous(lib, residue.amino_acid, residue.phi, residue.psi,
                                  opts.eval_samples, seed=rng)
    return np.stack([c.chi for c in cands])


def evaluate_residue(scorer, structure, residue, lib, opts, burial):
    """Score one residue's candidates; returns (chis, energies)."""
    rng = residue_rng(opts.seed, structure.identifier, residue.uid)
    rotations = (random_rotations(opts.n_rotations, rng) if opts.rotation_average
                 else np.eye(3)[None])
    chis = _candidates(lib, residue, burial, opts, rng)
    contexts = knn_contexts(structure, residue, apply_chi_batch(residue, chis), k=opts.k)
    return chis, np.asarray(scorer(structure, residue, chis, contexts, rotations), dtype=np.float64)


def recover_rotamers(scorer, structure, lib, protocol="discrete", opts=None):
    """Recovery results for every rotameric residue of ``structure``."""
    opts = (opts or EvalOptions(protocol=protocol)).validate()
    counts = burial_counts(structure)
    results = []
    for residue in structure.residues:
        if residue.amino_acid not in ROTAMERIC:
            continue
        burial = BurialClass.from_count(counts[residue.uid])
        base = dict(structure_id=structure.identifier, residue_uid=residue.uid,
                    amino_acid=residue.amino_acid, burial=burial.label, neighbors=burial.neighbors)
        reason = eligible(structure, residue, lib, opts.k)
        if reason is None:
            try:
                chis, energies = evaluate_residue(scorer, structure, residue, lib, opts, burial)
            except (SamplerError, GeometryError) as exc:
                reason = str(exc)
        if reason is not None:
            results.append(ResidueResult(**base, skip_reason=reason))
            continue
        best = int(np.argmin(energies))  # first minimum wins ties
        chosen, native = chis[best], np.asarray(residue.chi, dtype=np.float64)
        results.append(ResidueResult(
            **base,
            n_candidates=len(chis),
            chosen_chi=tuple(float(v) for v in chosen),
            native_chi=tuple(float(v) for v in native),
            recovered=is_recovered(chosen, native, residue.amino_acid, opts.symmetric),
            recovered_strict=is_recovered(chosen, native, residue.amino_acid, False),
            energy=float(energies[best]),
        ))
    return results


# ------------------------------------------------------------------ reports

def _pct(hit, n):
    return None if n == 0 else 100.0 * hit / n


@dataclass(frozen=True)
class RecoveryReport:
    """Recovery percentages; cells with no residues are None.

    ``hits`` and ``counts`` are kept so that reports over disjoint residue
    sets can be merged exactly.
    """

    hits: dict
    counts: dict
    strict: bool = False

    @property
    def average(self):
        return _pct(self.hits["average"], self.counts["average"])

    @property
    def buried(self):
        return _pct(self.hits["buried"], self.counts["buried"])

    @property
    def surface(self):
        return _pct(self.hits["surface"], self.counts["surface"])

    @property
    def per_amino_acid(self):
        return {aa: _pct(self.hits[aa], self.counts[aa]) for aa in ROTAMERIC}

    def to_json(self):
        return {
            "Avg": self.average,
            "Buried": self.buried,
            "Surface": self.surface,
            "per_amino_acid": self.per_amino_acid,
            "counts": dict(self.counts),
            "recovered": dict(self.hits),
            "symmetry": not self.strict,
        }


_CELLS = ("average", "buried", "surface") + ROTAMERIC


def aggregate(results, strict=False):
    """Average / buried / surface / per-amino-acid recovery over non-skipped results."""
    scored = [r for r in results if not r.skipped]
    if not scored:
        raise EmptyReportError("no scored residues to aggregate")
    hits = dict.fromkeys(_CELLS, 0)
    counts = dict.fromkeys(_CELLS, 0)
    for r in scored:
        ok = int(r.recovered_strict if strict else r.recovered)
        for cell in ("average", r.amino_acid) + ((r.burial,) if r.burial != "intermediate" else ()):
            hits[cell] += ok
            counts[cell] += 1
    return RecoveryReport(hits, counts, strict)


def merge_reports(reports):
    reports = list(reports)
    if not reports:
        raise EmptyReportError("nothing to merge")
    hits = {c: sum(r.hits[c] for r in reports) for c in _CELLS}
    counts = {c: sum(r.counts[c] for r in reports) for c in _CELLS}
    return RecoveryReport(hits, counts, reports[0].strict)


def write_report_json(path, report, strict_report=None, extra=None):
    doc = report.to_json()
    if strict_report is not None:
        doc["strict"] = strict_report.to_json()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


RESULT_COLUMNS = ("id", "aa", "burial", "n_candidates", "chosen_chi", "native_chi", "recovered", "energy")


def _angles(values):
    return ";".join(f"{v:.3f}" for v in values)


def write_results_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS + ("skip_reason",))
        for r in results:
            w.writerow([f"{r.structure_id}/{r.residue_uid}", r.amino_acid, r.burial, r.n_candidates,
                        _angles(r.chosen_chi), _angles(r.native_chi), int(r.recovered),
                        "" if r.skipped else f"{r.energy:.6g}", r.skip_reason or ""])
