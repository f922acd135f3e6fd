"""Acceptance gate: one test per criterion, each reporting PASS/FAIL.

The summary lines are printed at the end of the pytest run (see
``conftest.pytest_terminal_summary``).  Criterion 6 trains 24 desk-scale
models and dominates the runtime; set ``GAITEMOTION_SKIP_SLOW=1`` to skip it.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

import oracles
from gradcheck import check_total_loss_gradients
from gaitemotion.affective import extract_affective
from gaitemotion.cli import RunConfig, run_ablation
from gaitemotion.gait_io import generate_synthetic, label_matrix, stack_preprocessed
from gaitemotion.labels_metrics import CLASS_NAMES, average_precision, class_weights, mean_ap, to_multihot
from gaitemotion.model import GaitNet, ModelConfig
from gaitemotion.rotation import euler_to_matrix, extract_rotations, quat_mul, quat_to_euler, shortest_arc
from gaitemotion.skeleton import canonical_skeleton
from gaitemotion.training import (
    LossWeights,
    labeled_map,
    learning_rate_at,
    load_checkpoint,
    loss_affective,
    loss_angle,
    loss_autoencoder,
    loss_classifier,
    loss_quat,
    loss_total,
    save_checkpoint,
    teacher_forcing_at,
    train,
    write_log_csv,
)

RESULTS = {}
N_CASES = 1000

# Desk-scale settings for the end-to-end run: per-joint width 8 instead of
# 16 keeps 24 trainings inside the single-core time budget.
DESK = dict(joint_dim=8, epochs=100, batch_size=32)
DESK_SEEDS = (0, 1, 2)
FULL_ROW = "all_hp1_al1"


def record(number, title, ok, detail):
    RESULTS[number] = (title, bool(ok), detail)
    print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")


def _unit_quats(rng, n):
    return oracles.random_unit_quats(rng, n)


def test_criterion_1_geometry():
    rng = np.random.default_rng(1)
    start = time.perf_counter()

    q = _unit_quats(rng, N_CASES)
    euler = quat_to_euler(q)
    err_round = max(
        np.abs(euler_to_matrix(e) - oracles.matrix_from_quat(qi)).max() for e, qi in zip(euler, q)
    )

    u = rng.normal(size=(N_CASES, 3))
    v = rng.normal(size=(N_CASES, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    composed = quat_mul(shortest_arc(v, u), shortest_arc(u, v))
    composed *= np.sign(composed[:, :1])
    err_arc = np.abs(composed - [1.0, 0, 0, 0]).max()
    mapped = np.array([oracles.rotate(qi, ui) for qi, ui in zip(shortest_arc(u, v), u)])
    err_arc = max(err_arc, np.abs(mapped - v).max())

    poses = rng.normal(size=(N_CASES, 1, 21, 3))
    base = extract_affective(poses)
    moved = np.empty_like(poses)
    scales = rng.uniform(0.05, 20.0, N_CASES)
    for i in range(N_CASES):
        rot = oracles.random_rotation_matrix(rng)
        moved[i] = scales[i] * poses[i] @ rot.T + rng.normal(size=3) * 3
    err_aff = np.abs(extract_affective(moved) - base).max()

    elapsed = time.perf_counter() - start
    ok = err_round < 1e-6 and err_arc < 1e-9 and err_aff < 1e-9 and elapsed < 60
    record(1, "geometry oracles", ok,
           f"euler {err_round:.1e}, arc {err_arc:.1e}, affective {err_aff:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_loss_oracles():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        y = (rng.random(4) < 0.5).astype(float)
        p = rng.dirichlet(np.ones(4))
        w = rng.uniform(0.3, 1.0, 4)
        worst = max(worst, abs(float(loss_classifier(y, p, w)) - oracles.loss_classifier(y, p, w)))
        target = _unit_quats(rng, 6).reshape(2, 3, 4)
        recon = rng.normal(size=(2, 3, 4))
        worst = max(worst, abs(float(loss_quat(recon)) - oracles.loss_quat(recon)))
        worst = max(worst, abs(float(loss_angle(target, recon)) - oracles.loss_angle(target, recon)))
        a, b = rng.random((3, 3)), rng.random((3, 3))
        worst = max(worst, abs(float(loss_affective(a, b)) - oracles.loss_affective(a, b)))
        want_ae = oracles.loss_angle(target, recon) + 2 * oracles.loss_quat(recon) + 2 * oracles.loss_affective(a, b)
        worst = max(worst, abs(float(loss_autoencoder(target, recon, a, b)) - want_ae))

    n = 4
    rot = _unit_quats(rng, n * 6).reshape(n, 2, 3, 4)
    recon = rng.normal(size=(n, 2, 3, 4))
    aff = rng.random((n, 2, 3))
    emb = rng.normal(size=(n, 3, 3))
    probs = rng.dirichlet(np.ones(4), size=n)
    labels = (rng.random((n, 4)) < 0.5).astype(float)
    labels[1] = -1
    w = rng.uniform(0.3, 1, 4)
    got = float(loss_total(rot, recon, aff, emb, labels, probs, w, LossWeights(2.0, 2.0)))
    want = np.mean([
        oracles.loss_sample(rot[i], recon[i], aff[i], emb[i], None if i == 1 else labels[i], probs[i], w, 2.0, 2.0)
        for i in range(n)
    ])
    worst = max(worst, abs(got - want))

    worked_cl = float(loss_classifier([1, 0, 1, 0], [0.5, 0.1, 0.25, 0.15], np.ones(4)))
    worked_ang = float(loss_angle([[[1.0, 0, 0, 0]]], [[[math.cos(math.pi / 4), math.sin(math.pi / 4), 0, 0]]]))
    err_worked = max(abs(worked_cl - 2.0794), abs(worked_ang - (math.pi / 2) ** 2 / 3))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and abs(worked_cl - 2.0794) < 1e-4 and abs(worked_ang - (math.pi / 2) ** 2 / 3) < 1e-12
    ok = ok and elapsed < 60
    record(2, "loss oracles", ok, f"max diff {worst:.1e}, worked values off by {err_worked:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_gradient_check():
    start = time.perf_counter()
    err = check_total_loss_gradients(seed=0)
    elapsed = time.perf_counter() - start
    ok = err < 1e-3 and elapsed < 300
    record(3, "finite-difference gradient check", ok, f"max relative error {err:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_labels_and_metrics():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    bits_ok = to_multihot([0.5, 0.0, 0.3, 0.2]).tolist() == [1, 0, 1, 0]
    worst = 0.0
    for _ in range(500):
        k = int(rng.integers(2, 25))
        scores = np.round(rng.random(k), 1)
        rel = rng.random(k) < 0.4
        rel[rng.integers(k)] = True
        worst = max(worst, abs(average_precision(scores, rel) - oracles.average_precision_bruteforce(list(scores), list(rel))))
    m = mean_ap(dict(zip(CLASS_NAMES, (0.98, 0.89, 0.81, 0.71))))
    # the published 0.84 is the mean 0.8475 cut to two decimals
    published = math.floor(m * 100) / 100
    elapsed = time.perf_counter() - start
    ok = bits_ok and worst < 1e-12 and abs(published - 0.84) <= 0.005 and elapsed < 60
    record(4, "labels and metrics", ok, f"multi-hot {bits_ok}, AP max diff {worst:.1e}, mAP {m:.4f} -> {published:.2f}")
    assert ok


def test_criterion_5_overfit_smoke():
    ds = generate_synthetic(8, 0, seed=5)
    X = stack_preprocessed(ds.samples)
    y = label_matrix(ds.samples)
    skel = canonical_skeleton()
    rot, aff = extract_rotations(X, skel), extract_affective(X)
    start = time.perf_counter()
    torch.manual_seed(0)
    model = GaitNet(ModelConfig())
    # batches of 4 give two optimizer steps per epoch; one full batch of 8
    # leaves the affective term still falling at epoch 500
    state, log = train(model, rot, aff, y, class_weights(y), epochs=500, batch_size=4, seed=0, val=(rot, y))
    elapsed = time.perf_counter() - start
    train_map = labeled_map(model, rot, y)
    ratio = log[-1]["total_loss"] / log[0]["total_loss"]
    ok = train_map == 1.0 and ratio < 0.1 and elapsed < 600
    record(5, "overfit 8 samples", ok, f"train mAP {train_map:.4f}, loss ratio {ratio:.3f}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("GAITEMOTION_SKIP_SLOW") == "1", reason="GAITEMOTION_SKIP_SLOW=1")
def test_criterion_6_desk_scale_end_to_end():
    ds = generate_synthetic(400, 400, seed=0)
    start = time.perf_counter()
    tables = {}
    for seed in DESK_SEEDS:
        rows = run_ablation(RunConfig(seed=seed, **DESK), ds)
        tables[seed] = {r["row"]: r["map"] for r in rows}
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.3f}" for k, v in tables[seed].items()))
    elapsed = time.perf_counter() - start
    test_map = tables[DESK_SEEDS[0]][FULL_ROW]
    best_in = [s for s, t in tables.items() if t[FULL_ROW] >= max(t.values())]
    ok = test_map >= 0.75 and len(best_in) >= 2 and elapsed < 7200
    record(6, "desk-scale end to end", ok,
           f"test mAP {test_map:.4f}, full row best in seeds {best_in}, {elapsed / 60:.0f} min")
    assert ok


def test_criterion_7_schedules():
    tf = (teacher_forcing_at(0), teacher_forcing_at(100))
    lr = learning_rate_at(500)
    ok = tf == (1.0, 0.995**100) and lr == 0.001 * 0.999**500
    record(7, "schedules", ok, f"tf {tf[0]}, {tf[1]:.6f}; lr(500) {lr:.6e}")
    assert ok


def test_criterion_8_determinism_and_persistence(tmp_path):
    ds = generate_synthetic(24, 8, seed=8)
    X = stack_preprocessed(ds.samples)
    y = label_matrix(ds.samples)
    skel = canonical_skeleton()
    rot, aff = extract_rotations(X, skel), extract_affective(X)
    val = (rot[:8], y[:8])
    cfg = ModelConfig(joint_dim=4, decoder_hidden=16)

    def run(path):
        torch.manual_seed(3)
        model = GaitNet(cfg)
        _, log = train(model, rot, aff, y, class_weights(y[:24]), epochs=3, batch_size=8, seed=3, val=val)
        write_log_csv(log, path)
        return model

    model = run(tmp_path / "a.csv")
    run(tmp_path / "b.csv")
    same_log = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    save_checkpoint(tmp_path / "m.pt", model, epoch=3)
    loaded, _ = load_checkpoint(tmp_path / "m.pt")
    same_params = all(
        torch.equal(a, b) for a, b in zip(model.state_dict().values(), loaded.state_dict().values())
    ) and list(model.state_dict()) == list(loaded.state_dict())
    map_a, map_b = labeled_map(model, *val), labeled_map(loaded, *val)
    ok = same_log and same_params and map_a == map_b
    record(8, "determinism and persistence", ok,
           f"identical log {same_log}, identical params {same_params}, val mAP {map_a:.4f} vs {map_b:.4f}")
    assert ok
