"""Contrastive maximum-likelihood training with the rotamer-library sampler.

Each context contributes the native side chain as the positive and N
library-sampled side chains as negatives. The loss per context is

    E(x+) + logsumexp(-E(x+), -E(x1-), ..., -E(xN-))

which is the negative log of the softmax weight on the positive among the
N+1 candidates. The batch loss is the mean over contexts.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, GeometryError, NumericError, RotamerForgeError, SamplerError
from .geometry import DEFAULT_K, _as_rng, apply_chi_batch, knn_context, knn_contexts, random_rotations
from .model import collate, featurize, init_model, save_checkpoint
from .residues import ROTAMERIC
from .rotamers import sample_training

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.99
    beta2: float = 0.999
    batch_size: int = 64
    negatives: int = 128
    steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    validate_every: int = 100
    val_contexts: int = 64
    fixed_batch: bool = False
    exhaustive: bool = False
    augment_rotations: bool = True
    lr_schedule: str = "constant"

    def validate(self):
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0 or self.lr <= 0:
            raise ConfigError("steps must be >= 0 and lr > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        return self

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def nce_loss(e_pos, e_negs):
    """Loss for one context (scalars) or a batch (e_pos (B,), e_negs (B, N)).

    Accepts floats, numpy arrays or tensors; tensors keep their autograd graph.
    """
    as_tensor = isinstance(e_pos, torch.Tensor)
    pos = e_pos if as_tensor else torch.as_tensor(e_pos, dtype=torch.float64)
    negs = e_negs if isinstance(e_negs, torch.Tensor) else torch.as_tensor(
        np.asarray(e_negs, dtype=np.float64), dtype=pos.dtype)
    if negs.dim() == pos.dim():
        negs = negs.unsqueeze(-1)
    if negs.shape[-1] == 0:
        negs = negs.reshape(*pos.shape, 0)
    if not (torch.isfinite(pos).all() and torch.isfinite(negs).all()):
        raise NumericError("non-finite energy passed to nce_loss")
    logits = torch.cat([-pos.unsqueeze(-1), -negs.to(pos.dtype)], dim=-1)
    loss = pos + torch.logsumexp(logits, dim=-1)
    if as_tensor:
        return loss
    return float(loss) if loss.dim() == 0 else loss.numpy()


# ----------------------------------------------------------------- samples

@dataclass(frozen=True, eq=False)
class TrainSample:
    residue_uid: str
    positive: object
    negatives: list
    negative_chi: np.ndarray
    native_chi: np.ndarray = None


def eligible(structure, residue, lib, k=DEFAULT_K):
    """Why ``residue`` cannot be a training or evaluation target, or None."""
    if residue.amino_acid not in ROTAMERIC:
        return "not rotameric"
    if not residue.complete:
        return "incomplete"
    if residue.phi is None or residue.psi is None:
        return "undefined backbone torsion"
    if any(c is None for c in residue.chi):
        return "missing chi"
    if structure.n_atoms < k:
        return "context too small"
    if residue.amino_acid not in lib.bins:
        return "not in library"
    return None


class SkippedResidue(RotamerForgeError):
    pass


def build_sample(structure, residue, lib, n, seed=None, k=DEFAULT_K):
    """Native context plus ``n`` negatives drawn by the training sampler.

    Raises :class:`SkippedResidue` when the residue fails a precondition.
    """
    if isinstance(residue, str):
        residue = structure.residue(residue)
    reason = eligible(structure, residue, lib, k)
    if reason:
        raise SkippedResidue(f"{structure.identifier}/{residue.uid}: {reason}")
    rng = _as_rng(seed)
    native = np.array(residue.chi, dtype=np.float64)
    positive = knn_context(structure, residue, k=k)
    if n == 0:
        return TrainSample(residue.uid, positive, [], np.zeros((0, len(native))), native)
    try:
        draws = sample_training(lib, residue.amino_acid, residue.phi, residue.psi, n, seed=rng)
        chis = np.stack([d.chi for d in draws])
        placements = apply_chi_batch(residue, chis)
        negatives = knn_contexts(structure, residue, placements, k=k)
    except (SamplerError, GeometryError) as exc:
        raise SkippedResidue(f"{structure.identifier}/{residue.uid}: {exc}") from None
    return TrainSample(residue.uid, positive, negatives, chis, native)


class ResiduePool:
    """Training residues across structures, drawn uniformly or exhaustively."""

    def __init__(self, structures, lib, k=DEFAULT_K):
        self.targets = []
        self.skipped = {}
        for s in structures:
            for r in s.residues:
                reason = eligible(s, r, lib, k)
                if reason is None:
                    self.targets.append((s, r))
                elif r.amino_acid in ROTAMERIC:
                    self.skipped[reason] = self.skipped.get(reason, 0) + 1
        self.by_structure = {}
        for s, r in self.targets:
            self.by_structure.setdefault(s.identifier, (s, []))[1].append(r)
        self._order = []

    def __len__(self):
        return len(self.targets)

    def draw(self, rng, exhaustive=False):
        if not self.targets:
            raise ConfigError("no eligible training residues")
        if exhaustive:
            if not self._order:
                self._order = list(rng.permutation(len(self.targets)))
            return self.targets[self._order.pop()]
        # uniform structure, then uniform residue within it
        keys = sorted(self.by_structure)
        s, residues = self.by_structure[keys[rng.integers(len(keys))]]
        return s, residues[rng.integers(len(residues))]


def _batch_tensors(samples, rotations, dtype):
    """Featurize positives first then negatives: shape (B*(N+1)) rows."""
    fcs = []
    for sample, rot in zip(samples, rotations):
        # one rotation per context, shared by its positive and negatives
        fcs.append(featurize(sample.positive, rot))
        fcs.extend(featurize(c, rot) for c in sample.negatives)
    return collate(fcs, dtype)


def batch_loss(model, samples, rotations):
    n = len(samples[0].negatives)
    dtype = next(model.parameters()).dtype
    energies = model(*_batch_tensors(samples, rotations, dtype)).view(len(samples), n + 1)
    if not torch.isfinite(energies).all():
        raise NumericError("non-finite energy during training")
    return nce_loss(energies[:, 0], energies[:, 1:]).mean()


def _draw_batch(pool, lib, cfg, rng, k):
    samples = []
    attempts = 0
    while len(samples) < cfg.batch_size:
        attempts += 1
        if attempts > 20 * cfg.batch_size:
            raise ConfigError("could not build a batch: too many skipped residues")
        s, r = pool.draw(rng, cfg.exhaustive)
        try:
            samples.append(build_sample(s, r, lib, cfg.negatives, seed=rng, k=k))
        except SkippedResidue as exc:
            log.debug("skip %s", exc)
    return samples


@dataclass
class TrainResult:
    model: object
    history: list
    checkpoints: list


def _metrics_header(cfg, model_cfg, pool, val_pool):
    return {
        "config": {"train": asdict(cfg), "model": asdict(model_cfg)},
        "adam": {"lr": cfg.lr, "betas": [cfg.beta1, cfg.beta2]},
        "train_residues": len(pool),
        "validation_residues": len(val_pool) if val_pool else 0,
    }


def _poses(cfg, n, rng):
    """One rotation per context; identity for every context when augmentation is off."""
    if cfg.augment_rotations:
        return random_rotations(n, rng)
    return np.repeat(np.eye(3)[None], n, axis=0)


def train(config, model_config, structures, lib, val_structures=(), out_dir=None, model=None):
    """Run Adam on NCE batches; returns the trained model and its metrics.

    With ``out_dir`` set, writes ``metrics.jsonl`` (header record first,
    then one record per logged step) and checkpoints ``step_<n>.rfck`` at
    the configured cadence plus ``final.rfck``. A non-finite loss aborts the
    run and leaves the last good checkpoint in place.
    """
    cfg = config.validate()
    model_config = model_config.validate()
    k = model_config.k
    torch.manual_seed(cfg.seed)
    model = model if model is not None else init_model(model_config, seed=cfg.seed)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    sched = None
    if cfg.lr_schedule == "cosine" and cfg.steps:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    pool = ResiduePool(structures, lib, k)
    val_pool = ResiduePool(val_structures, lib, k) if val_structures else None
    val_batch = None
    if val_pool is not None and len(val_pool):
        vcfg = TrainConfig(**{**asdict(cfg), "batch_size": cfg.val_contexts})
        vrng = np.random.default_rng(cfg.seed + 1)
        val_batch = (_draw_batch(val_pool, lib, vcfg, vrng, k), _poses(cfg, cfg.val_contexts, vrng))

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w")
        metrics_fh.write(json.dumps(_metrics_header(cfg, model_config, pool, val_pool)) + "\n")

    history, checkpoints = [], []
    fixed = None
    if cfg.fixed_batch:
        # pure overfit: the same contexts under the same poses every step
        fixed = _draw_batch(pool, lib, cfg, rng, k)
        fixed = (fixed, _poses(cfg, len(fixed), rng))
    t0 = time.perf_counter()
    try:
        for step in range(1, cfg.steps + 1):
            if fixed is not None:
                samples, rotations = fixed
            else:
                samples = _draw_batch(pool, lib, cfg, rng, k)
                rotations = _poses(cfg, len(samples), rng)
            opt.zero_grad()
            loss = batch_loss(model, samples, rotations)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            loss.backward()
            opt.step()
            record = {"step": step, "loss": loss.item(), "val_loss": None, "lr": opt.param_groups[0]["lr"]}
            if sched is not None:
                sched.step()
            if val_batch is not None and cfg.validate_every and (step % cfg.validate_every == 0 or step == cfg.steps):
                record["val_loss"] = validation_loss(model, *val_batch)
            record["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
            history.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record) + "\n")
                metrics_fh.flush()
            if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoints.append(save_checkpoint(out / f"step_{step}.rfck", model, {"step": step}))
        if out is not None:
            checkpoints.append(save_checkpoint(out / "final.rfck", model, {"step": cfg.steps}))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.eval()
    return TrainResult(model, history, checkpoints)


def validation_loss(model, samples, rotations):
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = batch_loss(model, samples, rotations).item()
    model.train(was_training)
    return out
