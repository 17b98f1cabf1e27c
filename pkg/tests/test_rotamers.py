import io
import math

import numpy as np
import pytest

from rotamer_forge.errors import LibraryParseError, LibraryValidationError, SamplerError
from rotamer_forge.rotamers import (GRID_STEP, Component, bilinear_weights,
                                    candidates_discrete, discrete_from_components, interpolate,
                                    parse_library, sample_continuous, sample_training,
                                    select_components)


def row(aa, phi, psi, ids, prob, means, sigmas, count=100):
    ids = list(ids) + [0] * (4 - len(ids))
    means = list(means) + [0.0] * (4 - len(means))
    sigmas = list(sigmas) + [0.0] * (4 - len(sigmas))
    return (f"{aa} {phi} {psi} {count} " + " ".join(map(str, ids)) + f" {prob:.6f} "
            + " ".join(f"{m:g}" for m in means) + " " + " ".join(f"{s:g}" for s in sigmas))


def full_grid(aa, entries):
    """Rows for every (phi, psi) bin, each holding ``entries`` = [(ids, prob, means, sigmas)]."""
    lines = []
    for phi in range(-180, 190, GRID_STEP):
        for psi in range(-180, 190, GRID_STEP):
            for ids, prob, means, sigmas in entries:
                lines.append(row(aa, phi, psi, ids, prob, means, sigmas))
    return lines


def test_empty_library_is_a_parse_error():
    with pytest.raises(LibraryParseError):
        parse_library(io.StringIO(""))


def test_short_row_is_a_parse_error():
    with pytest.raises(LibraryParseError):
        parse_library(["SER -60 -40 10 1 0 0 0 0.5"])


def test_two_row_ser_fixture():
    lib = parse_library([row("SER", -60, -40, (3,), 0.3, (-65.0,), (10.0,)),
                         row("SER", -60, -40, (1,), 0.7, (64.0,), (9.0,))])
    entries = lib.bin_entries("SER", -60, -40)
    assert [e.probability for e in entries] == pytest.approx([0.7, 0.3])
    assert entries[0].chi_mean == (64.0,)
    assert len(lib.bins["SER"]) == 1


def test_zero_probability_rows_dropped():
    lib = parse_library([row("SER", -60, -40, (1,), 1.0, (64.0,), (9.0,)),
                         row("SER", -60, -40, (2,), 0.0, (180.0,), (9.0,))])
    assert len(lib.bin_entries("SER", -60, -40)) == 1


def test_bad_bin_sum_is_a_validation_error():
    with pytest.raises(LibraryValidationError):
        parse_library([row("SER", -60, -40, (1,), 0.5, (64.0,), (9.0,))])


def test_non_positive_sigma_is_a_validation_error():
    with pytest.raises(LibraryValidationError):
        parse_library([row("SER", -60, -40, (1,), 1.0, (64.0,), (0.0,))])


def test_fixture_library_grid(library):
    assert library.step == 10
    for aa in library.amino_acids:
        keys = library.bins[aa].keys()
        assert len(keys) == 36 * 36
        for entries in library.bins[aa].values():
            assert sum(e.probability for e in entries) == pytest.approx(1.0, abs=1e-3)
            assert all(s > 0 for e in entries for s in e.chi_sigma)
            probs = [e.probability for e in entries]
            assert probs == sorted(probs, reverse=True)
    # phi = +180 and -180 are the same bin
    assert library.bin_entries("LEU", 180, 50) == library.bin_entries("LEU", -180, 50)


def test_bilinear_worked_example():
    weights = dict(bilinear_weights(-63.0, 42.0))
    assert weights[(-60, 40)] == pytest.approx(0.56)
    assert weights[(-70, 40)] == pytest.approx(0.24)
    assert weights[(-60, 50)] == pytest.approx(0.14)
    assert weights[(-70, 50)] == pytest.approx(0.06)
    assert sum(weights.values()) == pytest.approx(1.0, abs=1e-12)


def test_bilinear_grid_point_and_centre():
    w = bilinear_weights(-60.0, 40.0)
    assert w[0] == ((-60, 40), 1.0) and all(x == 0 for _, x in w[1:])
    w = bilinear_weights(-65.0, 45.0)
    assert [x for _, x in w] == pytest.approx([0.25] * 4)


def test_bilinear_wraps():
    w = dict(bilinear_weights(175.0, -175.0))
    assert set(w) == {(170, 180 - 360), (-180, -180), (170, -170), (-180, -170)}


def test_bilinear_properties_random():
    rng = np.random.default_rng(0)
    for phi, psi in rng.uniform(-180, 180, size=(500, 2)):
        w = [x for _, x in bilinear_weights(phi, psi)]
        assert min(w) >= 0
        assert abs(sum(w) - 1.0) < 1e-12


def test_interpolate_at_grid_point_is_verbatim(library):
    comps = interpolate(library, "VAL", -60.0, -40.0)
    entries = library.bin_entries("VAL", -60, -40)
    assert [c.probability for c in comps] == pytest.approx([e.probability for e in entries])
    assert [c.chi_mean for c in comps] == [e.chi_mean for e in entries]


def test_interpolate_continuous_across_bin_edges(library):
    for phi, psi in [(-60.0, -40.0), (-100.0, 120.0), (170.0, 0.0)]:
        a = interpolate(library, "LEU", phi - 1e-6, psi)
        b = interpolate(library, "LEU", phi + 1e-6, psi)
        assert [c.rotamer_id for c in a] == [c.rotamer_id for c in b]
        for x, y in zip(a, b):
            assert abs(x.probability - y.probability) < 1e-3
            assert np.max(np.abs(np.subtract(x.chi_mean, y.chi_mean))) < 1e-3
            assert np.max(np.abs(np.subtract(x.chi_sigma, y.chi_sigma))) < 1e-3


def test_interpolate_circular_mean_across_180():
    lines = []
    for phi in (-60, -50):
        for psi in (-40, -30):
            mean = 175.0 if phi == -60 else -175.0
            lines.append(row("SER", phi, psi, (2,), 1.0, (mean,), (10.0,)))
    lib = parse_library(lines)
    (comp,) = interpolate(lib, "SER", -55.0, -35.0)
    assert abs(abs(comp.chi_mean[0]) - 180.0) < 1e-9


def test_interpolate_no_chi_residue(library):
    assert interpolate(library, "GLY", -60.0, -40.0) == []
    assert interpolate(library, "ALA", -60.0, -40.0) == []


def two_component_lib(p=(0.9, 0.1), sigma=10.0):
    return parse_library(full_grid("SER", [((1,), p[0], (60.0,), (sigma,)),
                                            ((2,), p[1], (180.0,), (sigma,))]))


def test_training_sampler_uniform_component_pick():
    lib = two_component_lib(sigma=0.1)
    n = 10_000
    draws = sample_training(lib, "SER", -63.0, 42.0, n, seed=1)
    frac = np.mean([d.rotamer_id == (1,) for d in draws])
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_training_sampler_mean_and_wrap():
    lib = parse_library(full_grid("SER", [((1,), 1.0, (60.0,), (12.0,))]))
    n = 10_000
    chis = np.array([d.chi[0] for d in sample_training(lib, "SER", -63.0, 42.0, n, seed=2)])
    assert abs(chis.mean() - 60.0) <= 3 * 12.0 / math.sqrt(n)
    assert np.all((chis >= -180) & (chis < 180))


def test_sigma_to_zero_collapses_to_mean():
    lib = parse_library(full_grid("SER", [((1,), 1.0, (60.0,), (1e-9,))]))
    for sampler in (sample_training, sample_continuous):
        chis = [d.chi[0] for d in sampler(lib, "SER", -60.0, -40.0, 50, seed=0)]
        assert np.allclose(chis, 60.0)


def test_continuous_sampler_follows_probabilities():
    lib = two_component_lib(sigma=0.1)
    n = 10_000
    draws = sample_continuous(lib, "SER", -63.0, 42.0, n, seed=3)
    frac = np.mean([d.rotamer_id == (1,) for d in draws])
    assert abs(frac - 0.9) <= 3 * math.sqrt(0.9 * 0.1 / n)
    assert all(-180 <= d.chi[0] < 180 for d in draws)


def test_samplers_reproducible(library):
    a = sample_training(library, "LYS", -65.0, -40.0, 20, seed=9)
    b = sample_training(library, "LYS", -65.0, -40.0, 20, seed=9)
    assert all(np.array_equal(x.chi, y.chi) for x, y in zip(a, b))


def test_empty_interpolation_is_a_sampler_error(library):
    with pytest.raises(SamplerError):
        sample_training(library, "GLY", -60.0, -40.0, 3, seed=0)
    with pytest.raises(SamplerError):
        candidates_discrete(library, "ALA", -60.0, -40.0, buried=False)


WORKED = [Component((1, 1), 0.6, (60.0, 90.0), (10.0, 8.0)),
          Component((2, 1), 0.3, (180.0, 80.0), (11.0, 9.0)),
          Component((3, 1), 0.08, (-60.0, 100.0), (9.0, 7.0)),
          Component((3, 2), 0.02, (-60.0, -30.0), (9.0, 7.0))]


def test_cumulative_mass_non_buried():
    assert len(select_components(WORKED, buried=False)) == 3
    assert len(discrete_from_components(WORKED, buried=False)) == 3


def test_buried_expansion_counts():
    cands = discrete_from_components(WORKED, buried=True)
    assert len(select_components(WORKED, buried=True)) == 3
    assert len(cands) == 27
    assert np.allclose(cands[0].chi, [60.0, 90.0])
    assert cands[0].provenance == "mean"


def test_discrete_independent_of_input_order():
    a = discrete_from_components(WORKED, buried=True)
    b = discrete_from_components(list(reversed(WORKED)), buried=True)
    assert [tuple(c.chi) for c in a] == [tuple(c.chi) for c in b]


def test_single_component_one_candidate():
    lib = parse_library(full_grid("SER", [((1,), 1.0, (60.0,), (10.0,))]))
    assert len(candidates_discrete(lib, "SER", -60.0, -40.0, buried=False)) == 1


def test_duplicate_candidates_removed():
    tiny = [Component((1,), 1.0, (60.0,), (1e-9,))]
    assert len(discrete_from_components(tiny, buried=True)) == 1


def test_candidate_chi_lengths(library):
    for aa in library.amino_acids:
        if aa in ("PRO", "CYS"):
            continue
        for c in candidates_discrete(library, aa, -65.0, -40.0, buried=True):
            assert len(c.chi) == len(library.bin_entries(aa, -60, -40)[0].chi_mean)
