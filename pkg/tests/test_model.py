import struct

import numpy as np
import pytest
import torch

from rotamer_forge.errors import CheckpointError, ConfigError, ContractError, NumericError, VocabularyError
from rotamer_forge.geometry import AtomContext, Rotation, knn_context, random_rotation
from rotamer_forge.model import (CHECKPOINT_MAGIC, FeaturizedContext, ModelConfig, context_embedding,
                                 desk_config, energy, energy_batch, ensemble_energy, fc_baseline_energy,
                                 featurize, init_model, load_checkpoint, parameter_count,
                                 read_checkpoint_header, save_checkpoint)
from rotamer_forge.residues import AMINO_ACIDS, ATOM_LABELS, ELEMENTS

TINY = dict(layers=2, width=64, heads=4, ff_width=128, embed_width=8, coord_width=40, mlp_hidden=32)


def random_fc(rng, k=64):
    return FeaturizedContext(
        element=rng.integers(len(ELEMENTS), size=k),
        atom_label=rng.integers(len(ATOM_LABELS), size=k),
        amino_acid=rng.integers(len(AMINO_ACIDS), size=k),
        coords=rng.normal(scale=5.0, size=(k, 3)),
        context_id="random",
    )


def permuted(fc, perm):
    return FeaturizedContext(fc.element[perm], fc.atom_label[perm], fc.amino_acid[perm], fc.coords[perm])


@pytest.fixture(scope="module")
def tiny_model():
    return init_model(ModelConfig(**TINY), seed=0).eval()


def test_default_config_and_parameter_count():
    cfg = ModelConfig()
    assert (cfg.layers, cfg.width, cfg.heads, cfg.ff_width) == (6, 256, 8, 1024)
    assert 3 * cfg.embed_width + cfg.coord_width == cfg.width
    assert (cfg.k, cfg.pooling, cfg.prenorm, cfg.dropout) == (64, "max", True, 0.0)
    assert 3_000_000 <= parameter_count(init_model(cfg)) <= 15_000_000


def test_invalid_configs():
    with pytest.raises(ConfigError):
        ModelConfig(heads=7).validate()
    with pytest.raises(ConfigError):
        ModelConfig(coord_width=100).validate()
    with pytest.raises(ConfigError):
        init_model(ModelConfig(dropout=0.1))


def test_desk_config_shape():
    cfg = desk_config()
    assert (cfg.layers, cfg.width) == (2, 128)


def test_same_seed_same_parameters():
    a, b = init_model(ModelConfig(**TINY), seed=5), init_model(ModelConfig(**TINY), seed=5)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    c = init_model(ModelConfig(**TINY), seed=6)
    assert not torch.equal(a.embedding.coords.weight, c.embedding.coords.weight)


def test_init_does_not_disturb_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    init_model(ModelConfig(**TINY), seed=9)
    assert torch.equal(torch.rand(3), expected)


def test_parameters_finite_and_logged(caplog):
    with caplog.at_level("INFO", logger="rotamer_forge.model"):
        model = init_model(ModelConfig(**TINY), seed=1)
    assert all(torch.isfinite(p).all() for p in model.parameters())
    assert str(parameter_count(model)) in caplog.text


def test_featurize_centres_and_rotates(bundle):
    ctx = knn_context(bundle, bundle.residues[30])
    plain = featurize(ctx, Rotation.identity())
    centred = ctx.coords - ctx.coords.mean(axis=0)
    assert np.array_equal(plain.coords, centred @ np.eye(3).T)
    assert np.max(np.abs(plain.coords.mean(axis=0))) < 1e-6
    rot = random_rotation(3)
    assert np.array_equal(featurize(ctx, rot).coords, centred @ rot.matrix.T)
    assert plain.k == 64


def test_featurize_unknown_label(bundle):
    ctx = knn_context(bundle, bundle.residues[30])
    labels = np.array(ctx.atom_label, dtype=object)
    labels[0] = "QQ9"
    bad = AtomContext(ctx.element, labels, ctx.amino_acid, ctx.coords, ctx.rotamer_mask,
                      ctx.atom_index, ctx.residue_uid, ctx.structure_id)
    with pytest.raises(VocabularyError):
        featurize(bad)


def test_translation_invariance_exact(bundle, tiny_model):
    ctx = knn_context(bundle, bundle.residues[30])
    # dyadic coordinates so that the offset itself adds no rounding
    xyz = np.round(ctx.coords * 1024) / 1024

    def at(coords):
        return AtomContext(ctx.element, ctx.atom_label, ctx.amino_acid, coords,
                           ctx.rotamer_mask, ctx.atom_index, ctx.residue_uid, ctx.structure_id)

    a, b = featurize(at(xyz)), featurize(at(xyz + np.array([37.0, -512.0, 3.5])))
    assert np.array_equal(a.coords, b.coords)
    assert energy(tiny_model, a) == energy(tiny_model, b)


def test_energy_deterministic_and_finite(tiny_model):
    fc = random_fc(np.random.default_rng(0))
    e1, e2 = energy(tiny_model, fc), energy(tiny_model, fc)
    assert e1 == e2 and np.isfinite(e1)


def test_permutation_invariance(tiny_model):
    rng = np.random.default_rng(1)
    fc = random_fc(rng)
    e = energy(tiny_model, fc)
    for _ in range(100):
        ep = energy(tiny_model, permuted(fc, rng.permutation(64)))
        assert abs(e - ep) <= 1e-5 * (1 + abs(e))


def test_energy_batch_matches_scalar(tiny_model):
    rng = np.random.default_rng(2)
    fcs = [random_fc(rng) for _ in range(12)]
    batch = energy_batch(tiny_model, fcs)
    assert batch == pytest.approx([energy(tiny_model, f) for f in fcs], abs=1e-5)
    assert energy_batch(tiny_model, fcs[:1]) == [energy(tiny_model, fcs[0])]
    assert energy_batch(tiny_model, []) == []


def test_non_finite_energy_names_context(tiny_model):
    fc = random_fc(np.random.default_rng(3))
    bad = FeaturizedContext(fc.element, fc.atom_label, fc.amino_acid, np.full((64, 3), np.nan), "ctx-77")
    with pytest.raises(NumericError, match="ctx-77"):
        energy(tiny_model, bad)


def test_ensemble_mean():
    rng = np.random.default_rng(4)
    fc = random_fc(rng)
    models = [init_model(ModelConfig(**TINY), seed=s).eval() for s in range(10)]
    assert ensemble_energy(models[:1], fc) == energy(models[0], fc)
    assert ensemble_energy(models, fc) == pytest.approx(np.mean([energy(m, fc) for m in models]), abs=1e-6)
    with pytest.raises(ContractError):
        ensemble_energy([], fc)
    with pytest.raises(ContractError):
        ensemble_energy([models[0], init_model(desk_config())], fc)


def test_ensemble_of_opposite_members_is_zero():
    a = init_model(ModelConfig(**TINY), seed=0).eval()
    b = init_model(ModelConfig(**TINY), seed=0).eval()
    with torch.no_grad():
        b.head[2].weight.neg_()
        b.head[2].bias.neg_()
    fc = random_fc(np.random.default_rng(5))
    assert energy(a, fc) == -energy(b, fc)
    assert ensemble_energy([a, b], fc) == pytest.approx(0.0, abs=1e-7)


def test_input_gradient_matches_finite_differences():
    model = init_model(desk_config(), seed=0).double().eval()
    fc = random_fc(np.random.default_rng(6))
    el, lab, aa = (torch.as_tensor(x)[None] for x in (fc.element, fc.atom_label, fc.amino_acid))
    x = torch.as_tensor(fc.coords, dtype=torch.float64)[None].requires_grad_(True)
    model(el, lab, aa, x).sum().backward()
    g = x.grad[0].numpy()
    h = 1e-4
    fd = np.zeros_like(g)
    with torch.no_grad():
        for i in range(64):
            for j in range(3):
                xp, xm = x.detach().clone(), x.detach().clone()
                xp[0, i, j] += h
                xm[0, i, j] -= h
                fd[i, j] = (model(el, lab, aa, xp) - model(el, lab, aa, xm)).item() / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-3


def test_fc_baseline_shape_and_determinism():
    cfg = ModelConfig(architecture="fc", **TINY)
    a, b = init_model(cfg, seed=3).eval(), init_model(cfg, seed=3).eval()
    fc = random_fc(np.random.default_rng(7))
    e = fc_baseline_energy(a, fc)
    assert np.isfinite(e) and e == fc_baseline_energy(b, fc)
    assert context_embedding(a, fc).shape == (cfg.fc_res_width,)
    with pytest.raises(ContractError):
        fc_baseline_energy(init_model(ModelConfig(**TINY)), fc)


@pytest.mark.xfail(strict=True, reason="the 64x256 flatten into a 1024-wide layer alone is 16.8M weights")
def test_fc_baseline_parameter_band():
    assert 5_000_000 <= parameter_count(init_model(ModelConfig(architecture="fc"))) <= 15_000_000


def test_zero_coordinate_projection_ignores_coordinates():
    model = init_model(ModelConfig(**TINY), seed=0).eval()
    with torch.no_grad():
        model.embedding.coords.weight.zero_()
    a, b = random_fc(np.random.default_rng(8)), random_fc(np.random.default_rng(8))
    b = FeaturizedContext(b.element, b.atom_label, b.amino_acid, b.coords * 3.0)
    assert energy(model, a) == energy(model, b)


def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = save_checkpoint(tmp_path / "m.rfck", tiny_model, {"step": 7})
    model, header = load_checkpoint(path)
    assert header["meta"] == {"step": 7}
    assert model.config == tiny_model.config
    fc = random_fc(np.random.default_rng(9))
    assert energy(model, fc) == energy(tiny_model, fc)
    assert not list(tmp_path.glob(".tmp-*"))


def test_checkpoint_layout(tmp_path, tiny_model):
    path = save_checkpoint(tmp_path / "m.rfck", tiny_model)
    raw = path.read_bytes()
    assert raw[:8] == CHECKPOINT_MAGIC
    (n,) = struct.unpack("<Q", raw[8:16])
    header, start = read_checkpoint_header(path)
    assert start == 16 + n
    assert header["parameter_count"] == parameter_count(tiny_model)
    for t in header["tensors"]:
        assert t["offset"] % 8 == 0
    last = header["tensors"][-1]
    assert len(raw) - start >= last["offset"] + last["nbytes"]


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.rfck"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
