"""Loss terms, schedules, the semi-supervised training loop, checkpoints.

Loss functions take tensors with optional leading batch axes and reduce over
the per-sample axes only, so ``loss_quat(x)`` on an ``(N, J, T, 4)`` tensor
returns ``N`` values.  :func:`loss_total` averages over the batch.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ConfigError, DegenerateQuatError, DivergenceError, ShapeError
from .labels_metrics import mean_average_precision
from .model import GaitNet, ModelConfig, affective_slice

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
BASE_LR = 1e-3
LR_DECAY = 0.999
TF_DECAY = 0.995
LOG_COLUMNS = (
    "epoch",
    "total_loss",
    "cl_loss",
    "ang_loss",
    "quat_loss",
    "aff_loss",
    "lr",
    "tf_prob",
    "val_map",
)
CHECKPOINT_FORMAT = "gaitemotion-checkpoint/1"


@dataclass(frozen=True)
class LossWeights:
    """Weights of the unit-norm and affective terms (sane range 0.5 to 2.5)."""

    lambda_quat: float = 2.0
    lambda_aff: float = 2.0

    def __post_init__(self):
        if self.lambda_quat < 0 or self.lambda_aff < 0:
            raise ConfigError("loss weights must be non-negative")


def learning_rate_at(epoch, base=BASE_LR, decay=LR_DECAY):
    return base * decay**epoch


def teacher_forcing_at(epoch, beta=TF_DECAY):
    return beta**epoch


def _t(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype or torch.float64)


def loss_classifier(y, y_hat, w):
    """Weighted cross-entropy ``-sum_l w_l y_l log(y_hat_l)``."""
    y_hat = _t(y_hat)
    y = _t(y, y_hat.dtype)
    w = _t(w, y_hat.dtype)
    return -(w * y * torch.log(y_hat.clamp_min(PROB_FLOOR))).sum(dim=-1)


def loss_quat(recon):
    """Mean squared deviation of quaternion norms from 1."""
    recon = _t(recon)
    return ((torch.linalg.vector_norm(recon, dim=-1) - 1.0) ** 2).mean(dim=(-2, -1))


def _euler(q):
    """Intrinsic X-Y-Z angles of (normalized) quaternions, unwrapped."""
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    r00 = 1 - 2 * (y * y + z * z)
    r01 = 2 * (x * y - w * z)
    r02 = 2 * (x * z + w * y)
    r11 = 1 - 2 * (x * x + z * z)
    r12 = 2 * (y * z - w * x)
    r21 = 2 * (y * z + w * x)
    r22 = 1 - 2 * (x * x + y * y)
    cos_b = torch.sqrt(r00 * r00 + r01 * r01)
    lock = cos_b < 1e-9
    b = torch.atan2(r02, cos_b)
    a = torch.where(lock, torch.atan2(r21, r11), torch.atan2(-r12, r22))
    c = torch.where(lock, torch.zeros_like(a), torch.atan2(-r01, r00))
    return torch.stack([a, b, c], dim=-1)


def wrap_angle(d):
    """Map angle differences into ``(-pi, pi]``."""
    return torch.atan2(torch.sin(d), torch.cos(d))


def loss_angle(target, recon):
    """Mean squared wrapped Euler-angle difference over all ``3 J T`` angles.

    Raises:
        DegenerateQuatError: if any reconstructed quaternion is exactly zero.
    """
    recon = _t(recon)
    target = _t(target, recon.dtype)
    if target.shape != recon.shape:
        raise ShapeError(f"target {tuple(target.shape)} vs reconstruction {tuple(recon.shape)}")
    if bool((torch.linalg.vector_norm(recon.detach(), dim=-1) == 0).any()):
        raise DegenerateQuatError("reconstruction contains a zero quaternion")
    diff = wrap_angle(_euler(target) - _euler(recon))
    return (diff**2).mean(dim=(-3, -2, -1))


def loss_affective(a, a_hat):
    a_hat = _t(a_hat)
    a = _t(a, a_hat.dtype)
    if a.shape != a_hat.shape:
        raise ShapeError(f"affective target {tuple(a.shape)} vs slice {tuple(a_hat.shape)}")
    return ((a - a_hat) ** 2).mean(dim=(-2, -1))


def loss_autoencoder(D, D_hat, a, a_hat, lw: LossWeights = LossWeights()):
    return loss_angle(D, D_hat) + lw.lambda_quat * loss_quat(D_hat) + lw.lambda_aff * loss_affective(a, a_hat)


def loss_total(rotations, recon, affective, embedding, labels, probs, weights, lw=LossWeights(), components=False):
    """Semi-supervised objective averaged over the batch.

    ``labels`` rows equal to -1 mark unlabeled samples, which contribute the
    autoencoder terms only.  ``recon=None`` drops the autoencoder terms
    entirely (classifier-only training).
    """
    probs = _t(probs)
    labels = _t(labels, probs.dtype)
    has_label = (labels >= 0).all(dim=-1).to(probs.dtype)
    cl = loss_classifier(labels.clamp_min(0), probs, weights) * has_label
    if recon is None:
        zero = torch.zeros_like(cl)
        ang = quat = aff = zero
    else:
        ang = loss_angle(rotations, recon)
        quat = loss_quat(recon)
        emb = _t(embedding)
        aff = loss_affective(affective, affective_slice(emb, _t(affective).shape[-2]))
    total = cl + ang + lw.lambda_quat * quat + lw.lambda_aff * aff
    if components:
        return {
            "total_loss": total.mean(),
            "cl_loss": cl.mean(),
            "ang_loss": ang.mean(),
            "quat_loss": quat.mean(),
            "aff_loss": aff.mean(),
        }
    return total.mean()


def network_loss(model: GaitNet, rotations, affective, labels, weights, lw, teacher_forcing=0.0, components=False):
    """Run the network on a batch and evaluate :func:`loss_total`."""
    emb, recon, probs = model(rotations, teacher_forcing)
    if not model.cfg.use_affective_loss:
        lw = LossWeights(lw.lambda_quat, 0.0)
    return loss_total(rotations, recon, affective, emb, labels, probs, weights, lw, components=components)


@torch.no_grad()
def predict_proba(model: GaitNet, rotations, batch_size=256):
    model.eval()
    rot = torch.as_tensor(rotations, dtype=torch.float32)
    out = [model.classify(model.encode(rot[i : i + batch_size])) for i in range(0, len(rot), batch_size)]
    if not out:
        return np.zeros((0, model.cfg.n_classes))
    return torch.cat(out).double().numpy()


def labeled_map(model, rotations, labels):
    keep = (np.asarray(labels) >= 0).all(axis=1)
    if not keep.any():
        return float("nan")
    return mean_average_precision(predict_proba(model, np.asarray(rotations)[keep]), np.asarray(labels)[keep])


@dataclass
class TrainState:
    epoch: int = 0
    seed: int = 0
    lr: float = BASE_LR
    tf_prob: float = 1.0
    optimizer_state: dict = field(default_factory=dict)
    best_val_map: float = -math.inf
    best_epoch: int = -1
    best_state: dict | None = None


def _batches(order, batch_size):
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs two samples; fold a trailing singleton into its neighbour
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train(
    model: GaitNet,
    rotations,
    affective,
    labels,
    weights,
    lw: LossWeights = LossWeights(),
    *,
    epochs=500,
    batch_size=32,
    seed=0,
    val=None,
    base_lr=BASE_LR,
    lr_decay=LR_DECAY,
    tf_decay=TF_DECAY,
    verbose=False,
):
    """Fit ``model`` in place.

    Args:
        rotations: ``(N, J, T, 4)`` training rotations.
        affective: ``(N, A, T)`` scaled affective targets.
        labels: ``(N, C)`` multi-hot rows, -1 rows for unlabeled samples.
        weights: per-class loss weights.
        val: optional ``(rotations, labels)`` pair scored every epoch; the
            best-scoring parameters are restored at the end.

    Returns:
        ``(state, log)`` where ``log`` is a list of per-epoch dicts keyed by
        :data:`LOG_COLUMNS`.

    Raises:
        DivergenceError: on a non-finite loss.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    rot = torch.as_tensor(np.asarray(rotations), dtype=torch.float32)
    aff = torch.as_tensor(np.asarray(affective), dtype=torch.float32)
    lab = torch.as_tensor(np.asarray(labels), dtype=torch.float32)
    w = torch.as_tensor(np.asarray(weights), dtype=torch.float32)
    if not model.cfg.use_decoder:
        keep = (lab >= 0).all(dim=1)
        rot, aff, lab = rot[keep], aff[keep], lab[keep]
    n = len(rot)
    if n == 0:
        raise ValueError("no training samples")

    optimizer = torch.optim.Adam(model.parameters(), lr=base_lr, betas=(0.9, 0.999), eps=1e-8)
    state = TrainState(seed=seed)
    log = []
    for epoch in range(epochs):
        lr = learning_rate_at(epoch, base_lr, lr_decay)
        tf = teacher_forcing_at(epoch, tf_decay)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        sums = dict.fromkeys(LOG_COLUMNS[1:6], 0.0)
        for step, idx in enumerate(_batches(rng.permutation(n), batch_size)):
            idx = torch.as_tensor(idx)
            parts = network_loss(model, rot[idx], aff[idx], lab[idx], w, lw, tf, components=True)
            loss = parts["total_loss"]
            if not torch.isfinite(loss):
                raise DivergenceError(epoch, step, loss.item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for k, v in parts.items():
                sums[k] += v.item() * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "lr": lr, "tf_prob": tf}
        row["val_map"] = labeled_map(model, *val) if val is not None else float("nan")
        log.append(row)
        if val is not None and row["val_map"] > state.best_val_map:
            state.best_val_map = row["val_map"]
            state.best_epoch = epoch
            state.best_state = copy.deepcopy(model.state_dict())
        if verbose:
            logger.info(
                "epoch %d loss %.4f cl %.4f ang %.4f val_map %.4f",
                epoch, row["total_loss"], row["cl_loss"], row["ang_loss"], row["val_map"],
            )
        state.epoch, state.lr, state.tf_prob = epoch + 1, lr, tf
    state.optimizer_state = optimizer.state_dict()
    if state.best_state is not None:
        model.load_state_dict(state.best_state)
    return state, log


def save_checkpoint(path, model: GaitNet, epoch=0, meta=None):
    """Write config, parameters and buffers to a torch archive."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "epoch": int(epoch),
        "meta": meta or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Return ``(model, payload)``; the model is in eval mode."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a gaitemotion checkpoint")
    cfg = ModelConfig.from_dict(payload["config"])
    model = GaitNet(cfg)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint parameters do not match its config: {exc}") from None
    model.eval()
    return model, payload


def write_log_csv(log, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS))
        writer.writeheader()
        for row in log:
            writer.writerow({k: repr(float(row[k])) if k != "epoch" else row[k] for k in LOG_COLUMNS})
