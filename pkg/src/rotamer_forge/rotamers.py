"""Backbone-dependent rotamer library and the three rotamer sampling regimes.

The library is read from the Dunbrack 2010 text layout::

    T  Phi  Psi  Count  r1 r2 r3 r4  Probabil  chi1Val..chi4Val  chi1Sig..chi4Sig

on a 10° (phi, psi) grid. Rotamer components at the four grid points around
a query are matched by their (r1..rn) id and merged with bilinear weights.
"""

import gzip
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .errors import LibraryParseError, LibraryValidationError, SamplerError
from .geometry import _as_rng, wrap_angle
from .residues import CHI_COUNT

GRID_STEP = 10
_N_BINS = 360 // GRID_STEP
BURIED_MASS = 0.98
EXPOSED_MASS = 0.95
_DUPLICATE_TOL = 1e-6


@dataclass(frozen=True)
class RotamerEntry:
    rotamer_id: tuple
    probability: float
    chi_mean: tuple
    chi_sigma: tuple


@dataclass(frozen=True)
class RotamerLibrary:
    """``bins[aa][(phi_idx, psi_idx)]`` holds entries sorted by descending probability."""

    bins: dict
    step: int = GRID_STEP

    @property
    def amino_acids(self):
        return tuple(sorted(self.bins))

    def bin_entries(self, aa, phi, psi):
        """Entries stored at grid point (phi, psi) in degrees."""
        return self.bins[aa][(_bin_index(phi), _bin_index(psi))]


@dataclass(frozen=True)
class Component:
    """One rotamer of the interpolated mixture at a continuous (phi, psi)."""

    rotamer_id: tuple
    probability: float
    chi_mean: tuple
    chi_sigma: tuple


@dataclass(frozen=True, eq=False)
class RotamerCandidate:
    chi: np.ndarray
    probability: float
    provenance: str
    rotamer_id: tuple = ()


def _bin_index(angle):
    return int(round((wrap_angle(angle) + 180.0) / GRID_STEP)) % _N_BINS


def _open_lines(source):
    if isinstance(source, (list, tuple)):
        return list(source)
    if hasattr(source, "read"):
        return source.read().splitlines()
    path = Path(source)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            return fh.read().splitlines()
    return path.read_text().splitlines()


def parse_library(source):
    """Read a backbone-dependent library from a path, file object, or list of lines.

    Zero-probability rows are dropped. Each bin must sum to 1 within 1e-2 and
    is then renormalised exactly.
    """
    raw = {}
    n_rows = 0
    for lineno, line in enumerate(_open_lines(source), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 17:
            raise LibraryParseError(f"line {lineno}: expected 17 columns, got {len(parts)}")
        aa = parts[0].upper()
        try:
            phi, psi = int(float(parts[1])), int(float(parts[2]))
            ids = tuple(int(v) for v in parts[4:8])
            prob = float(parts[8])
            means = [float(v) for v in parts[9:13]]
            sigmas = [float(v) for v in parts[13:17]]
        except ValueError as exc:
            raise LibraryParseError(f"line {lineno}: {exc}") from None
        n_rows += 1
        if phi == 180 or psi == 180:
            continue  # duplicates of the -180 bins
        if phi % GRID_STEP or psi % GRID_STEP:
            raise LibraryParseError(f"line {lineno}: ({phi}, {psi}) is off the {GRID_STEP}° grid")
        if prob <= 0.0:
            continue
        nchi = CHI_COUNT.get(aa)
        if nchi is None:
            raise LibraryParseError(f"line {lineno}: unknown residue {aa}")
        sig = tuple(sigmas[:nchi])
        if any(s <= 0 for s in sig):
            raise LibraryValidationError(f"line {lineno}: non-positive chi sigma")
        entry = RotamerEntry(ids[:max(nchi, 1)], prob, tuple(means[:nchi]), sig)
        raw.setdefault(aa, {}).setdefault((_bin_index(phi), _bin_index(psi)), []).append(entry)
    if n_rows == 0:
        raise LibraryParseError("rotamer library is empty")
    bins = {}
    for aa, grid in raw.items():
        out = {}
        for key, entries in grid.items():
            total = sum(e.probability for e in entries)
            if abs(total - 1.0) > 1e-2:
                phi, psi = key[0] * GRID_STEP - 180, key[1] * GRID_STEP - 180
                raise LibraryValidationError(f"{aa} bin ({phi}, {psi}) sums to {total:.4f}")
            entries = [RotamerEntry(e.rotamer_id, e.probability / total, e.chi_mean, e.chi_sigma)
                       for e in entries]
            entries.sort(key=lambda e: (-e.probability, e.rotamer_id))
            out[key] = tuple(entries)
        bins[aa] = out
    return RotamerLibrary(bins=bins)


def bilinear_weights(phi, psi):
    """The four surrounding grid points (degrees) and their weights, heaviest first."""
    x = (wrap_angle(phi) + 180.0) / GRID_STEP
    y = (wrap_angle(psi) + 180.0) / GRID_STEP
    i0, j0 = int(math.floor(x)), int(math.floor(y))
    t, u = x - i0, y - j0
    corners = [
        ((i0, j0), (1 - t) * (1 - u)),
        ((i0 + 1, j0), t * (1 - u)),
        ((i0, j0 + 1), (1 - t) * u),
        ((i0 + 1, j0 + 1), t * u),
    ]
    out = [(((i % _N_BINS) * GRID_STEP - 180, (j % _N_BINS) * GRID_STEP - 180), w)
           for (i, j), w in corners]
    return sorted(out, key=lambda c: -c[1])


def interpolate(lib, aa, phi, psi):
    """Merge the rotamer components of the four bins around (phi, psi).

    Probabilities and sigmas are combined linearly, chi means on the shortest
    arc. Returns components sorted by descending probability; empty for
    residues without chi angles or absent from the library.
    """
    grid = lib.bins.get(aa)
    if not grid or CHI_COUNT.get(aa, 0) == 0:
        return []
    acc = {}
    for (bphi, bpsi), w in bilinear_weights(phi, psi):
        if w == 0.0:
            continue
        for e in grid.get((_bin_index(bphi), _bin_index(bpsi)), ()):
            slot = acc.setdefault(e.rotamer_id, {"p": 0.0, "w": 0.0, "ref": e.chi_mean,
                                                  "dmu": np.zeros(len(e.chi_mean)),
                                                  "sig": np.zeros(len(e.chi_sigma))})
            slot["p"] += w * e.probability
            slot["w"] += w
            slot["dmu"] += w * np.asarray(wrap_angle(np.subtract(e.chi_mean, slot["ref"])))
            slot["sig"] += w * np.asarray(e.chi_sigma)
    comps = []
    for rid, s in acc.items():
        mean = wrap_angle(np.asarray(s["ref"]) + s["dmu"] / s["w"])
        comps.append(Component(
            rotamer_id=rid,
            probability=s["p"],
            chi_mean=tuple(float(v) for v in np.atleast_1d(mean)),
            chi_sigma=tuple(float(v) for v in s["sig"] / s["w"]),
        ))
    comps.sort(key=lambda c: (-c.probability, c.rotamer_id))
    return comps


def _draw(components, picks, rng, provenance):
    means = np.array([c.chi_mean for c in components])
    sigmas = np.array([c.chi_sigma for c in components])
    chis = wrap_angle(means[picks] + sigmas[picks] * rng.standard_normal(means[picks].shape))
    chis = np.atleast_2d(chis)
    return [
        RotamerCandidate(chi=chis[i], probability=components[p].probability,
                         provenance=provenance, rotamer_id=components[p].rotamer_id)
        for i, p in enumerate(picks)
    ]


def sample_training(lib, aa, phi, psi, n, seed=None):
    """n rotamers for the training sampler: components picked uniformly, chi Gaussian."""
    if n < 0:
        raise ValueError("n must be >= 0")
    components = interpolate(lib, aa, phi, psi)
    if not components:
        raise SamplerError(f"no rotamers for {aa} at ({phi}, {psi})")
    rng = _as_rng(seed)
    picks = rng.integers(len(components), size=n)
    return _draw(components, picks, rng, "training")


def sample_continuous(lib, aa, phi, psi, n, seed=None):
    """n rotamers with components picked by interpolated library probability."""
    components = interpolate(lib, aa, phi, psi)
    if not components:
        raise SamplerError(f"no rotamers for {aa} at ({phi}, {psi})")
    rng = _as_rng(seed)
    p = np.array([c.probability for c in components])
    picks = rng.choice(len(components), size=n, p=p / p.sum())
    return _draw(components, picks, rng, "continuous")


def select_components(components, buried):
    """Most probable components until the cumulative mass reaches 98% (buried) or 95%."""
    target = BURIED_MASS if buried else EXPOSED_MASS
    ordered = sorted(components, key=lambda c: (-c.probability, c.rotamer_id))
    kept, mass = [], 0.0
    for c in ordered:
        kept.append(c)
        mass += c.probability
        if mass >= target - 1e-9:
            break
    return kept


def discrete_from_components(components, buried):
    kept = select_components(components, buried)
    out = []
    for c in kept:
        mu = np.asarray(c.chi_mean)
        sig = np.asarray(c.chi_sigma)
        if buried:
            # mu first so that candidate 0 is always the top component at its mean
            steps = [(0.0, -1.0, 1.0)] * min(2, len(mu)) + [(0.0,)] * (len(mu) - min(2, len(mu)))
        else:
            steps = [(0.0,)] * len(mu)
        for offsets in product(*steps):
            chi = wrap_angle(mu + sig * np.array(offsets))
            chi = np.atleast_1d(chi)
            tag = "mean" if not any(offsets) else "mean±sigma"
            if any(np.all(np.abs(angle_gap(chi, o.chi)) <= _DUPLICATE_TOL) for o in out):
                continue
            out.append(RotamerCandidate(chi=chi, probability=c.probability, provenance=tag,
                                        rotamer_id=c.rotamer_id))
    return out


def angle_gap(a, b):
    return wrap_angle(np.asarray(a) - np.asarray(b))


def candidates_discrete(lib, aa, phi, psi, buried):
    """Rotamer-trials candidate set: means, plus chi1/chi2 at mu±sigma when buried."""
    components = interpolate(lib, aa, phi, psi)
    if not components:
        raise SamplerError(f"no rotamers for {aa} at ({phi}, {psi})")
    return discrete_from_components(components, buried)
