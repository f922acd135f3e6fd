"""Encoder / decoder / classifier networks.

Tensor layouts: rotations ``(N, J, T, 4)``, embeddings ``(N, E, T)``,
probabilities ``(N, C)``.  Every linear layer (except the label output) is
followed by ELU, then batch normalization over the batch and time axes, then
dropout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import ConfigError, ShapeError
from .skeleton import canonical_skeleton


def _default_groups():
    return tuple(tuple(g) for g in canonical_skeleton().group_indices())


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 21
    n_frames: int = 48
    n_classes: int = 4
    n_affective: int = 18
    embed_dim: int = 32
    joint_dim: int = 16
    gru_layers: int = 2
    classifier_dims: tuple = (16, 8)
    decoder_hidden: int | None = None
    dropout: float = 0.1
    part_groups: tuple = field(default_factory=_default_groups)
    use_hierarchical_pooling: bool = True
    use_affective_loss: bool = True
    use_decoder: bool = True

    def __post_init__(self):
        object.__setattr__(self, "classifier_dims", tuple(int(d) for d in self.classifier_dims))
        object.__setattr__(self, "part_groups", tuple(tuple(int(j) for j in g) for g in self.part_groups))
        if self.embed_dim < self.n_affective:
            raise ConfigError(f"embed_dim {self.embed_dim} must be >= n_affective {self.n_affective}")
        widths = (self.n_joints, self.n_frames, self.n_classes, self.embed_dim, self.joint_dim, self.gru_layers)
        if min(widths + self.classifier_dims) <= 0 or len(self.classifier_dims) != 2:
            raise ConfigError("all widths must be positive and classifier_dims must have two entries")
        members = sorted(j for g in self.part_groups for j in g)
        if members != list(range(self.n_joints)):
            raise ConfigError("part_groups must partition the joints")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def hidden(self) -> int:
        return self.decoder_hidden or 4 * self.n_joints

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier_dims"] = list(self.classifier_dims)
        d["part_groups"] = [list(g) for g in self.part_groups]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class GroupedLinear(nn.Module):
    """``G`` independent affine maps applied to ``(..., G, in)`` inputs."""

    def __init__(self, groups, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(groups, in_features, out_features))
        self.bias = nn.Parameter(torch.empty(groups, out_features))
        bound = in_features ** -0.5
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x):
        return torch.einsum("...gi,gio->...go", x, self.weight) + self.bias


class SeqNorm(nn.Module):
    """Batch norm over every leading axis of a ``(..., F)`` tensor."""

    def __init__(self, features):
        super().__init__()
        self.bn = nn.BatchNorm1d(features)

    def forward(self, x):
        shape = x.shape
        return self.bn(x.reshape(-1, shape[-1])).reshape(shape)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        J, h = cfg.n_joints, cfg.joint_dim
        self.cfg = cfg
        self.gru = nn.GRU(4 * J, J * h, num_layers=cfg.gru_layers, batch_first=True)
        if cfg.use_hierarchical_pooling:
            self.joint_lin = GroupedLinear(J, h, h)
            self.joint_norm = SeqNorm(J * h)
            pool = torch.zeros(len(cfg.part_groups), J)
            for p, members in enumerate(cfg.part_groups):
                pool[p, list(members)] = 1.0
            self.register_buffer("pool", pool)
            self.part_lin = GroupedLinear(len(cfg.part_groups), h, h)
            self.part_norm = SeqNorm(len(cfg.part_groups) * h)
            self.body_lin = nn.Linear(h, h)
        else:
            self.body_lin = nn.Linear(J * h, h)
        self.body_norm = SeqNorm(h)
        self.embed_lin = nn.Linear(h, cfg.embed_dim)
        self.embed_norm = SeqNorm(cfg.embed_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def _block(self, x, norm, grouped=False):
        x = F.elu(x)
        if grouped:
            n, t, g, h = x.shape
            x = norm(x.reshape(n, t, g * h)).reshape(n, t, g, h)
        else:
            x = norm(x)
        return self.drop(x)

    def joint_features(self, rotations):
        """Per-joint linear-unit outputs ``(N, T, J, h)``."""
        n, J, T, _ = rotations.shape
        seq = rotations.permute(0, 2, 1, 3).reshape(n, T, 4 * J)
        feats, _ = self.gru(seq)
        feats = feats.reshape(n, T, J, self.cfg.joint_dim)
        return self._block(self.joint_lin(feats), self.joint_norm, grouped=True)

    def pool_parts(self, joint_feats):
        """Sum joint features within each part: ``(N, T, P, h)``."""
        return torch.einsum("ntjh,pj->ntph", joint_feats, self.pool)

    def forward(self, rotations):
        cfg = self.cfg
        if cfg.use_hierarchical_pooling:
            parts = self.pool_parts(self.joint_features(rotations))
            parts = self._block(self.part_lin(parts), self.part_norm, grouped=True)
            body_in = parts.sum(dim=2)
        else:
            n, J, T, _ = rotations.shape
            feats, _ = self.gru(rotations.permute(0, 2, 1, 3).reshape(n, T, 4 * J))
            body_in = feats
        body = self._block(self.body_lin(body_in), self.body_norm)
        emb = self.embed_norm(F.elu(self.embed_lin(body)))
        return emb.transpose(1, 2)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        J, h, P = cfg.n_joints, cfg.joint_dim, len(cfg.part_groups)
        self.cfg = cfg
        self.part_lin = GroupedLinear(P, cfg.embed_dim, h)
        self.part_norm = SeqNorm(P * h)
        owner = torch.empty(J, dtype=torch.long)
        for p, members in enumerate(cfg.part_groups):
            owner[list(members)] = p
        self.register_buffer("owner", owner)
        self.gru_first = nn.GRU(J * h, cfg.hidden, batch_first=True)
        self.first_out = nn.Linear(cfg.hidden, 4 * J)
        self.gru_step = nn.GRUCell(4 * J, cfg.hidden)
        self.step_out = nn.Linear(cfg.hidden, 4 * J)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, embedding, target=None, teacher_forcing=0.0):
        """Reconstruct ``(N, J, T, 4)`` rotations.

        With probability ``teacher_forcing`` (drawn per sample and per step)
        the step unit is fed the ground-truth rotations of the previous step
        from ``target`` instead of its own previous prediction.
        """
        cfg = self.cfg
        n, E, T = embedding.shape
        J, P, h = cfg.n_joints, len(cfg.part_groups), cfg.joint_dim
        x = embedding.transpose(1, 2).unsqueeze(2).expand(n, T, P, E)
        parts = F.elu(self.part_lin(x))
        parts = self.drop(self.part_norm(parts.reshape(n, T, P * h)).reshape(n, T, P, h))
        joints = parts[:, :, self.owner].reshape(n, T, J * h)
        _, state = self.gru_first(joints)
        state = state[-1]
        prev = self.first_out(state)
        outputs = [prev]
        if target is not None and teacher_forcing > 0:
            truth = target.permute(0, 2, 1, 3).reshape(n, T, 4 * J)
            mask = torch.rand(n, T - 1, 1, dtype=embedding.dtype, device=embedding.device) < teacher_forcing
        else:
            truth = mask = None
        for t in range(1, T):
            inp = prev if truth is None else torch.where(mask[:, t - 1], truth[:, t - 1], prev)
            state = self.gru_step(inp, state)
            prev = inp + self.step_out(state)
            outputs.append(prev)
        out = torch.stack(outputs, dim=1).reshape(n, T, J, 4)
        return out.permute(0, 2, 1, 3)


class Classifier(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.classifier_dims
        self.lin1 = nn.Linear(cfg.embed_dim, c1)
        self.norm1 = SeqNorm(c1)
        self.lin2 = nn.Linear(c1, c2)
        self.norm2 = SeqNorm(c2)
        self.out = nn.Linear(cfg.n_frames * c2, cfg.n_classes)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, embedding):
        x = embedding.transpose(1, 2)
        x = self.drop(self.norm1(F.elu(self.lin1(x))))
        x = self.drop(self.norm2(F.elu(self.lin2(x))))
        return torch.softmax(self.out(x.flatten(1)), dim=-1)


class GaitNet(nn.Module):
    """Semi-supervised network: encoder, optional decoder, classifier."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg) if cfg.use_decoder else None
        self.classifier = Classifier(cfg)

    def _check(self, x, shape, what):
        if x.dim() != len(shape) + 1 or tuple(x.shape[1:]) != shape:
            raise ShapeError(f"{what}: expected (N, {', '.join(map(str, shape))}), got {tuple(x.shape)}")

    def encode(self, rotations):
        cfg = self.cfg
        self._check(rotations, (cfg.n_joints, cfg.n_frames, 4), "rotations")
        return self.encoder(rotations)

    def decode(self, embedding, target=None, teacher_forcing=0.0):
        cfg = self.cfg
        if self.decoder is None:
            raise ConfigError("model was built without a decoder")
        self._check(embedding, (cfg.embed_dim, cfg.n_frames), "embedding")
        return self.decoder(embedding, target, teacher_forcing)

    def classify(self, embedding):
        cfg = self.cfg
        self._check(embedding, (cfg.embed_dim, cfg.n_frames), "embedding")
        return self.classifier(embedding)

    def forward(self, rotations, teacher_forcing=0.0):
        emb = self.encode(rotations)
        recon = self.decode(emb, rotations, teacher_forcing) if self.decoder is not None else None
        return emb, recon, self.classify(emb)


def affective_slice(embedding, n_affective=18):
    """First ``n_affective`` embedding rows (``(..., E, T) -> (..., A, T)``)."""
    if embedding.shape[-2] < n_affective:
        raise ShapeError(f"embedding has {embedding.shape[-2]} rows, need {n_affective}")
    return embedding[..., :n_affective, :]


def encode(rotations, model: GaitNet):
    """Embed one ``(J, T, 4)`` gait or an ``(N, J, T, 4)`` batch."""
    x = torch.as_tensor(rotations, dtype=next(model.parameters()).dtype)
    single = x.dim() == 3
    out = model.encode(x[None] if single else x)
    return out[0] if single else out


def decode(embedding, model: GaitNet, target=None, teacher_forcing=0.0):
    x = torch.as_tensor(embedding, dtype=next(model.parameters()).dtype)
    single = x.dim() == 2
    if single:
        x = x[None]
        target = None if target is None else torch.as_tensor(target, dtype=x.dtype)[None]
    out = model.decode(x, target, teacher_forcing)
    return out[0] if single else out


def classify(embedding, model: GaitNet):
    x = torch.as_tensor(embedding, dtype=next(model.parameters()).dtype)
    single = x.dim() == 2
    out = model.classify(x[None] if single else x)
    return out[0] if single else out
