"""Energy models over k-atom contexts.

Two architectures share one atom embedding (element, atom label and residue
type embeddings concatenated with a linear projection of the centred
coordinates):

* ``transformer``: pre-norm Transformer encoder blocks, max pooling over
  atoms, then a two-layer MLP to a scalar.
* ``fc``: the fully-connected baseline. The k atom embeddings are flattened
  and passed through three 1024-wide dense layers, then a bottleneck residual
  block (1024 -> 256 -> 1024). Its 1024 outputs are read as four groups of
  256 features which are mean-pooled into one 256-vector before the final
  dense layer to a scalar.

Checkpoint layout (little-endian)::

    8 bytes   magic  b"RFCKPT\\x00\\x01"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: {"format_version", "config", "tensors":
              [{"name", "dtype", "shape", "offset", "nbytes"}], "meta"}
    ...       raw tensor bytes; offsets are relative to the end of the header
              and 8-byte aligned
"""

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, ConfigError, ContractError, NumericError, VocabularyError
from .geometry import Rotation
from .residues import AMINO_ACIDS, ATOM_LABELS, ELEMENTS

log = logging.getLogger(__name__)

ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}
LABEL_INDEX = {a: i for i, a in enumerate(ATOM_LABELS)}
AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}

CHECKPOINT_MAGIC = b"RFCKPT\x00\x01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "transformer"
    layers: int = 6
    width: int = 256
    heads: int = 8
    ff_width: int = 1024
    embed_width: int = 28
    coord_width: int = 172
    mlp_hidden: int = 256
    k: int = 64
    pooling: str = "max"
    prenorm: bool = True
    dropout: float = 0.0
    fc_hidden: int = 1024
    fc_res_width: int = 256

    def validate(self):
        if self.architecture not in ("transformer", "fc"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if 3 * self.embed_width + self.coord_width != self.width:
            raise ConfigError(
                f"3*embed_width + coord_width = {3 * self.embed_width + self.coord_width} "
                f"must equal width {self.width}"
            )
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.pooling not in ("max", "mean"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.dropout != 0.0:
            raise ConfigError("dropout is not supported")
        if self.fc_hidden % self.fc_res_width:
            raise ConfigError("fc_hidden must be a multiple of fc_res_width")
        if min(self.layers, self.k, self.mlp_hidden, self.ff_width) < 1:
            raise ConfigError("layers, k, mlp_hidden and ff_width must be positive")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def desk_config(architecture="transformer", **overrides):
    """The reduced 2-layer, 128-wide configuration used for desk-scale runs."""
    base = ModelConfig(architecture=architecture, layers=2, width=128, heads=8, ff_width=512,
                       embed_width=16, coord_width=80, mlp_hidden=128)
    return replace(base, **overrides).validate()


@dataclass(frozen=True, eq=False)
class FeaturizedContext:
    element: np.ndarray
    atom_label: np.ndarray
    amino_acid: np.ndarray
    coords: np.ndarray
    context_id: str = ""

    @property
    def k(self):
        return len(self.coords)


def _lookup(table, values, what):
    try:
        return np.fromiter((table[v] for v in values), dtype=np.int64, count=len(values))
    except KeyError as exc:
        raise VocabularyError(f"unknown {what} {exc.args[0]!r}") from None


def featurize(context, rotation=None):
    """Centre the context's coordinates, rotate them, and index its categorical features."""
    coords = np.asarray(context.coords, dtype=np.float64)
    centred = coords - coords.mean(axis=0)
    if rotation is not None:
        matrix = rotation.matrix if isinstance(rotation, Rotation) else np.asarray(rotation)
        centred = centred @ matrix.T
    return FeaturizedContext(
        element=_lookup(ELEMENT_INDEX, context.element, "element"),
        atom_label=_lookup(LABEL_INDEX, context.atom_label, "atom label"),
        amino_acid=_lookup(AA_INDEX, context.amino_acid, "amino acid"),
        coords=centred,
        context_id=f"{getattr(context, 'structure_id', '')}/{getattr(context, 'residue_uid', '')}",
    )


# ------------------------------------------------------------------ modules

COORD_INIT_STD = 0.2


class AtomEmbedding(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.element = nn.Embedding(len(ELEMENTS), cfg.embed_width)
        self.atom_label = nn.Embedding(len(ATOM_LABELS), cfg.embed_width)
        self.amino_acid = nn.Embedding(len(AMINO_ACIDS), cfg.embed_width)
        self.coords = nn.Linear(3, cfg.coord_width)
        # unit-scale tokens; the coordinate weights are scaled so a typical
        # context radius (~5 A) lands on the same order as the categorical parts
        for emb in (self.element, self.atom_label, self.amino_acid):
            nn.init.trunc_normal_(emb.weight, std=1.0, a=-2.0, b=2.0)
        nn.init.normal_(self.coords.weight, std=COORD_INIT_STD)
        nn.init.zeros_(self.coords.bias)

    def forward(self, element, atom_label, amino_acid, coords):
        return torch.cat([
            self.element(element),
            self.atom_label(atom_label),
            self.amino_acid(amino_acid),
            self.coords(coords),
        ], dim=-1)


class EncoderBlock(nn.Module):
    def __init__(self, width, heads, ff_width, prenorm=True):
        super().__init__()
        self.heads = heads
        self.prenorm = prenorm
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff_width), nn.ReLU(), nn.Linear(ff_width, width))

    def attention(self, x):
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // self.heads), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)

    def forward(self, x):
        if self.prenorm:
            x = x + self.attention(self.norm1(x))
            return x + self.ff(self.norm2(x))
        x = self.norm1(x + self.attention(x))
        return self.norm2(x + self.ff(x))


class AtomTransformer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.config = cfg
        self.embedding = AtomEmbedding(cfg)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.width, cfg.heads, cfg.ff_width, cfg.prenorm) for _ in range(cfg.layers)
        )
        self.final_norm = nn.LayerNorm(cfg.width) if cfg.prenorm else nn.Identity()
        self.head = nn.Sequential(nn.Linear(cfg.width, cfg.mlp_hidden), nn.ReLU(),
                                  nn.Linear(cfg.mlp_hidden, 1))

    def embed(self, element, atom_label, amino_acid, coords):
        """Pooled context vector (batch, width), the input to the energy MLP."""
        x = self.embedding(element, atom_label, amino_acid, coords)
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        return x.max(dim=1).values if self.config.pooling == "max" else x.mean(dim=1)

    def forward(self, element, atom_label, amino_acid, coords):
        return self.head(self.embed(element, atom_label, amino_acid, coords)).squeeze(-1)


class FullyConnectedEnergy(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.config = cfg
        h = cfg.fc_hidden
        self.embedding = AtomEmbedding(cfg)
        self.dense = nn.Sequential(
            nn.Linear(cfg.k * cfg.width, h), nn.ReLU(),
            nn.Linear(h, h), nn.ReLU(),
            nn.Linear(h, h), nn.ReLU(),
        )
        self.res_down = nn.Linear(h, cfg.fc_res_width)
        self.res_up = nn.Linear(cfg.fc_res_width, h)
        self.out = nn.Linear(cfg.fc_res_width, 1)

    def embed(self, element, atom_label, amino_acid, coords):
        x = self.embedding(element, atom_label, amino_acid, coords)
        if x.shape[1] != self.config.k:
            raise ContractError(f"fc model expects exactly {self.config.k} atoms, got {x.shape[1]}")
        x = self.dense(x.flatten(1))
        x = x + self.res_up(F.relu(self.res_down(x)))
        return x.view(x.shape[0], -1, self.config.fc_res_width).mean(dim=1)

    def forward(self, element, atom_label, amino_acid, coords):
        return self.out(self.embed(element, atom_label, amino_acid, coords)).squeeze(-1)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def init_model(config=None, seed=0):
    """Fresh model for ``config``; the seed fully determines the parameters."""
    config = (config or ModelConfig()).validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = AtomTransformer(config) if config.architecture == "transformer" else FullyConnectedEnergy(config)
    log.info("initialised %s model with %d parameters", config.architecture, parameter_count(model))
    return model


# ------------------------------------------------------------------ energies

def collate(fcs, dtype=torch.float32):
    return (
        torch.as_tensor(np.stack([f.element for f in fcs])),
        torch.as_tensor(np.stack([f.atom_label for f in fcs])),
        torch.as_tensor(np.stack([f.amino_acid for f in fcs])),
        torch.as_tensor(np.stack([f.coords for f in fcs]), dtype=dtype),
    )


def _dtype(model):
    return next(model.parameters()).dtype


def _check_finite(values, ids):
    bad = ~torch.isfinite(values)
    if bad.any():
        where = [ids[i] for i in torch.nonzero(bad).flatten().tolist()][:5]
        raise NumericError(f"non-finite energy for contexts {where}")


def energy_batch(model, fcs, chunk_size=512):
    """Energies for a list of featurized contexts, in order."""
    fcs = list(fcs)
    if not fcs:
        return []
    out = []
    with torch.no_grad():
        for start in range(0, len(fcs), chunk_size):
            part = fcs[start:start + chunk_size]
            values = model(*collate(part, _dtype(model)))
            _check_finite(values, [f.context_id for f in part])
            out.extend(values.double().tolist())
    return out


def energy(model, fc):
    """Scalar energy of one featurized context."""
    return energy_batch(model, [fc])[0]


def ensemble_energy(models, fc):
    """Mean energy over ensemble members."""
    models = list(models)
    if not models:
        raise ContractError("ensemble needs at least one model")
    if len({m.config for m in models}) != 1:
        raise ContractError("ensemble members must share one config")
    return float(np.mean([energy(m, fc) for m in models]))


def fc_baseline_energy(model, fc):
    if model.config.architecture != "fc":
        raise ContractError("fc_baseline_energy needs a fully-connected model")
    return energy(model, fc)


def context_embedding(model, fc):
    """Post-pooling, pre-MLP hidden vector for one context."""
    with torch.no_grad():
        return model.embed(*collate([fc], _dtype(model)))[0].double().numpy()


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model, meta=None):
    """Write ``model`` atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    tensors, blobs, offset = [], [], 0
    for name, t in state.items():
        arr = t.detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        tensors.append({"name": name, "dtype": str(arr.dtype.name), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        pad = (-len(data)) % 8
        blobs.append(data + b"\x00" * pad)
        offset += len(data) + pad
    header = json.dumps({
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameter_count": parameter_count(model),
        "tensors": tensors,
        "meta": meta or {},
    }, sort_keys=True).encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".rfck")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for b in blobs:
                fh.write(b)
        # mkstemp files are private; give the checkpoint normal umask permissions
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint_header(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a rotamer_forge checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, 16 + n


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns (model, header)."""
    header, data_start = read_checkpoint_header(path)
    config = ModelConfig.from_dict(header["config"])
    model = init_model(config, seed=0)
    raw = Path(path).read_bytes()[data_start:]
    state = {}
    for t in header["tensors"]:
        arr = np.frombuffer(raw, dtype=np.dtype(t["dtype"]).newbyteorder("<"),
                            count=int(np.prod(t["shape"], dtype=np.int64)), offset=t["offset"])
        state[t["name"]] = torch.from_numpy(arr.reshape(t["shape"]).copy())
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    model.eval()
    return model, header
