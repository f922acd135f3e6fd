"""Finite-difference gradient check on a float64 micro network."""

import numpy as np
import torch

from gaitemotion.model import GaitNet, ModelConfig
from gaitemotion.training import LossWeights, network_loss


def _quats(rng, *shape):
    q = rng.normal(size=shape + (4,))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def micro_model(seed=0):
    cfg = ModelConfig(
        n_joints=2, n_frames=3, n_classes=4, n_affective=2, embed_dim=3, joint_dim=4,
        classifier_dims=(3, 2), decoder_hidden=5, dropout=0.0, part_groups=((0,), (1,)),
    )
    torch.manual_seed(seed)
    model = GaitNet(cfg).double()
    # non-trivial running statistics so eval-mode normalization is exercised
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm1d):
            m.running_mean.uniform_(-0.2, 0.2)
            m.running_var.uniform_(0.5, 1.5)
    return model.eval()


def micro_batch(rng):
    rot = torch.as_tensor(_quats(rng, 3, 2, 3))
    aff = torch.as_tensor(rng.random((3, 2, 3)))
    labels = torch.tensor([[1.0, 0, 1, 0], [0, 1, 0, 0], [-1, -1, -1, -1]], dtype=torch.float64)
    w = torch.as_tensor(np.exp(-np.array([0.5, 0.3, 0.2, 0.1])))
    return rot, aff, labels, w


def max_relative_gradient_error(model, loss_fn, eps=1e-6):
    params = list(model.parameters())
    model.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        numeric = torch.zeros_like(p)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
            numeric.view(-1)[i] = (up - down) / (2 * eps)
        denom = max(analytic.norm().item(), numeric.norm().item(), 1e-10)
        worst = max(worst, (analytic - numeric).norm().item() / denom)
    return worst


def check_total_loss_gradients(seed=0):
    rng = np.random.default_rng(seed)
    model = micro_model(seed)
    rot, aff, labels, w = micro_batch(rng)
    lw = LossWeights()
    return max_relative_gradient_error(model, lambda: network_loss(model, rot, aff, labels, w, lw))
