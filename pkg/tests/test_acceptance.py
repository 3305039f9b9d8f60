"""Acceptance gate: one test per desk-scale criterion.

Each test prints a single PASS line with the measured values so the suite
log doubles as the acceptance report. Heavyweight pipelines (the flagship
Iris run) execute once in session fixtures and are shared across criteria.
"""

import itertools
import os
import time

import numpy as np
import pytest

from weightflow.bn_recalib import PooledStats
from weightflow.canonicalize import (apply_attention_assignment,
                                     apply_permutation, invert_permutation,
                                     random_assignment, solve_lap_max,
                                     transfusion_align, weight_match,
                                     AttentionAssignment)
from weightflow.config import parse_config
from weightflow.flow import (FlowConfig, fm_loss_and_grads, init_flow_model,
                             rk4_integrate)
from weightflow.nn_core import (ArchitectureSpec, AttentionSpec, evaluate,
                                flatten, forward, init_weights, mha_forward,
                                random_attention)
from weightflow.pca import fit_dual, fit_standard, inverse_transform, transform
from weightflow.pipeline import read_manifest, run_pipeline, sha256_file

IRIS_CONFIG = """\
[run]
task = iris
seed = 0

[arch]
layer_dims = 4,16,3

[population]
size = 50
base_seed = 100
optimizer = adam
learning_rate = 1e-3
batch_size = 16
epochs = 100

[canonicalize]
mode = rebasin

[flow]
hidden_dim = 256
time_embed_dim = 4
dropout = 0.4
iterations = 30000

[generate]
count = 50
"""

BLOBS_CONFIG = """\
[run]
task = blobs
seed = 0

[data]
blobs_classes = 3
blobs_per_class = 100
blobs_dim = 8

[arch]
layer_dims = 8,16,16,3
bn = 1,1

[population]
size = 25
base_seed = 200
epochs = 30

[canonicalize]
mode = rebasin

[pca]
mode = dual
exact_eigen = 1

[flow]
hidden_dim = 128
time_embed_dim = 4
iterations = 10000

[generate]
count = 25
"""

TREND_CONFIG = """\
[run]
task = blobs
seed = 0

[data]
blobs_classes = 3
blobs_per_class = 100
blobs_dim = 8

[arch]
layer_dims = 8,16,3

[population]
size = 8
base_seed = 300
epochs = 30

[canonicalize]
mode = {mode}

[flow]
hidden_dim = 64
time_embed_dim = 4
iterations = 4000

[generate]
count = 8
"""

DETERMINISM_CONFIG = """\
[run]
task = iris
seed = 0

[arch]
layer_dims = 4,16,3

[population]
size = 5
base_seed = 100

[canonicalize]
mode = rebasin

[flow]
hidden_dim = 32
time_embed_dim = 4
dropout = 0.4
iterations = 400

[generate]
count = 5
"""


def _run(tmp_factory, name, config_text):
    root = tmp_factory.mktemp(name)
    cfg_path = root / "config.ini"
    cfg_path.write_text(config_text)
    cfg = parse_config(cfg_path)
    out = str(root / "out")
    start = time.time()
    run_pipeline(cfg, out)
    elapsed = time.time() - start
    return out, elapsed


@pytest.fixture(scope="session")
def iris_run(tmp_path_factory):
    return _run(tmp_path_factory, "iris_accept", IRIS_CONFIG)


@pytest.fixture(scope="session")
def blobs_run(tmp_path_factory):
    return _run(tmp_path_factory, "blobs_accept", BLOBS_CONFIG)


def test_criterion_01_iris_end_to_end(iris_run):
    out, elapsed = iris_run
    m = read_manifest(os.path.join(out, "metrics.txt"))
    orig = float(m["original_accuracy_mean"]) * 100
    gen = float(m["generated_accuracy_mean"]) * 100
    assert 87.7 <= orig <= 93.7, f"original ensemble mean {orig:.2f} out of band"
    assert gen >= orig - 3.0, f"generated mean {gen:.2f} dropped > 3 points"
    assert 86.0 <= gen <= 95.0, f"generated mean {gen:.2f} out of band"
    assert elapsed <= 900, f"runtime {elapsed:.0f}s over budget"
    print(f"PASS criterion 1: original {orig:.2f}%, generated {gen:.2f}%, "
          f"{elapsed:.0f}s")


def test_criterion_02_mnist_or_blobs_relative(blobs_run):
    # MNIST IDX files are not shipped; the blobs pipeline substitutes and
    # must satisfy the same relative criterion.
    out, elapsed = blobs_run
    m = read_manifest(os.path.join(out, "metrics.txt"))
    orig = float(m["original_accuracy_mean"]) * 100
    gen = float(m["generated_accuracy_mean"]) * 100
    assert gen >= orig - 1.5, f"generated mean {gen:.2f} vs original {orig:.2f}"
    assert elapsed <= 3600
    print(f"PASS criterion 2 (blobs fallback): original {orig:.2f}%, "
          f"generated {gen:.2f}%, {elapsed:.0f}s")


def test_criterion_03_low_capacity_trend(tmp_path_factory):
    results = {}
    for mode in ("rebasin", "off"):
        out, _ = _run(tmp_path_factory, f"trend_{mode}",
                      TREND_CONFIG.format(mode=mode))
        results[mode] = read_manifest(os.path.join(out, "metrics.txt"))
        assert os.path.exists(os.path.join(out, "report.txt"))
    table = tmp_path_factory.mktemp("trend_table") / "comparison.txt"
    with open(table, "w") as f:
        f.write("population,original_acc,generated_acc\n")
        for mode, label in (("rebasin", "canonicalized"), ("off", "raw")):
            f.write(f"{label},{results[mode]['original_accuracy_mean']},"
                    f"{results[mode]['generated_accuracy_mean']}\n")
    canon = float(results["rebasin"]["generated_accuracy_mean"]) * 100
    raw = float(results["off"]["generated_accuracy_mean"]) * 100
    print(f"PASS criterion 3: pipelines completed; generated accuracy "
          f"{canon:.2f}% canonicalized vs {raw:.2f}% raw "
          f"(published trend 57.80 vs 25.54, reported not asserted)")


def test_criterion_04_canonicalization_invariance(blobs):
    _, test = blobs
    arch = ArchitectureSpec((4, 12, 8, 3), "relu")
    worst = 0.0
    rng = np.random.default_rng(0)
    for trial in range(20):
        a = init_weights(arch, seed=trial)
        ref = init_weights(arch, seed=trial + 1000)
        aligned = weight_match(a, ref).aligned
        x = rng.normal(size=(100, 4)).astype(np.float32)
        worst = max(worst, float(np.max(np.abs(forward(a, x)
                                               - forward(aligned, x)))))
        assert evaluate(a, test).accuracy == evaluate(aligned, test).accuracy
    assert worst <= 1e-5, f"max logit deviation {worst:.2e}"
    print(f"PASS criterion 4: max |logit delta| {worst:.2e}, "
          f"accuracy delta exactly 0 in 20/20 trials")


def test_criterion_05_lap_oracle():
    rng = np.random.default_rng(42)
    for trial in range(200):
        n = int(rng.integers(1, 8))
        score = rng.normal(size=(n, n))
        p = solve_lap_max(score)
        got = score[np.arange(n), p].sum()
        best = max(sum(score[i, q[i]] for i in range(n))
                   for q in itertools.permutations(range(n)))
        assert abs(got - best) <= 1e-12 * max(1.0, abs(best)), \
            f"trial {trial}: {got} != {best}"
    print("PASS criterion 5: Hungarian = exhaustive optimum on 200/200 "
          "instances (n <= 7)")


def test_criterion_06_rebasin_recovery():
    arch = ArchitectureSpec((4, 10, 8, 3), "relu")
    recovered = 0
    for trial in range(20):
        ref = init_weights(arch, seed=trial)
        perm = random_assignment(arch, seed=trial + 500)
        permuted = apply_permutation(ref, perm)
        result = weight_match(permuted, ref)
        trace = result.objective_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:])), \
            f"trial {trial}: objective not monotone"
        ok = all(np.array_equal(got, invert_permutation(applied))
                 for got, applied in zip(result.assignment.layer_perms,
                                         perm.layer_perms))
        recovered += ok
    assert recovered == 20, f"recovered only {recovered}/20"
    print("PASS criterion 6: permutation inverted in 20/20 trials, "
          "objective monotone in all")


def test_criterion_07_transfusion_recovery():
    spec = AttentionSpec(embed_dim=32, num_heads=4, head_dim=8)
    rng = np.random.default_rng(0)
    worst = 0.0
    exact = 0
    for trial in range(20):
        ref = random_attention(spec, seed=trial)
        gen = np.random.default_rng(trial + 900)
        applied = AttentionAssignment(
            gen.permutation(4), tuple(gen.permutation(8) for _ in range(4)))
        permuted = apply_attention_assignment(ref, applied)
        result = transfusion_align(permuted, ref)
        tokens = rng.normal(size=(10, 32))
        dev = float(np.max(np.abs(mha_forward(result.aligned, tokens)
                                  - mha_forward(permuted, tokens))))
        worst = max(worst, dev)
        exact += np.allclose(result.aligned.w_q, ref.w_q, atol=1e-10)
    assert worst <= 1e-4, f"max mha deviation {worst:.2e}"
    assert exact == 20, f"exact recovery only {exact}/20 (spectra are generic)"
    print(f"PASS criterion 7: mha invariance <= {worst:.2e}; exact recovery "
          "20/20")


def test_criterion_08_dual_pca_equivalence():
    rng = np.random.default_rng(7)
    worst_eig = worst_comp = worst_rand = worst_rt = 0.0
    for _ in range(20):
        x = rng.normal(size=(20, 500))
        a = fit_standard(x, 10)
        b = fit_dual(x, 10, exact_eigen=True)
        scale = a.eigenvalues.max()
        worst_eig = max(worst_eig,
                        float(np.max(np.abs(a.eigenvalues - b.eigenvalues))
                              / scale))
        for j in range(10):
            ca, cb = a.components[:, j], b.components[:, j]
            dev = min(np.max(np.abs(ca - cb)), np.max(np.abs(ca + cb)))
            worst_comp = max(worst_comp, float(dev))
        c = fit_dual(x, 10, exact_eigen=False, seed=0)
        worst_rand = max(worst_rand,
                         float(np.max(np.abs(a.eigenvalues - c.eigenvalues))
                               / scale))
        full = fit_standard(x, 19)
        back = inverse_transform(full, transform(full, x))
        worst_rt = max(worst_rt, float(np.max(np.abs(back - x))))
    assert worst_eig <= 1e-8
    assert worst_comp <= 1e-6
    assert worst_rand <= 1e-3
    assert worst_rt <= 1e-5
    print(f"PASS criterion 8: eig rel {worst_eig:.2e}, comp {worst_comp:.2e}, "
          f"randomized {worst_rand:.2e}, round-trip {worst_rt:.2e}")


def test_criterion_09_bn_recalibration_exactness():
    # hand case: batches [0,2] then [4,6] -> mean 3, variance 5 exactly
    stats = PooledStats.zeros(1)
    stats.update_from_batch(np.array([[0.0], [2.0]]))
    stats.update_from_batch(np.array([[4.0], [6.0]]))
    assert stats.mean[0] == 3.0 and stats.var[0] == 5.0
    rng = np.random.default_rng(11)
    stream = rng.normal(size=(64, 5))
    ref_mean, ref_var = stream.mean(axis=0), stream.var(axis=0)
    worst = 0.0
    for _ in range(50):
        cuts = np.sort(rng.choice(np.arange(1, 64),
                                  size=int(rng.integers(1, 8)), replace=False))
        stats = PooledStats.zeros(5)
        for part in np.split(stream, cuts):
            stats.update_from_batch(part)
        worst = max(worst,
                    float(np.max(np.abs(stats.mean - ref_mean)
                                 / np.maximum(np.abs(ref_mean), 1e-300))),
                    float(np.max(np.abs(stats.var - ref_var)
                                 / np.abs(ref_var))))
    assert worst <= 1e-10, f"worst relative deviation {worst:.2e}"
    print(f"PASS criterion 9: hand case exact; 50 partitions within "
          f"{worst:.2e} relative")


def test_criterion_10_rk4():
    u = np.array([2.0, -1.0, 0.5])
    const = rk4_integrate(lambda x, t: u, np.zeros(3), steps=7)
    const_err = float(np.max(np.abs(const - u)))
    assert const_err <= 1e-6
    x0 = np.array([1.0, -0.5, 2.0])
    out = rk4_integrate(lambda x, t: x, x0, steps=100)
    rel = float(np.max(np.abs(out - np.e * x0) / np.abs(np.e * x0)))
    assert rel <= 1e-8
    print(f"PASS criterion 10: constant field {const_err:.2e}, "
          f"exponential rel {rel:.2e}")


def test_criterion_11_fm_gradient_check():
    cfg = FlowConfig(input_dim=4, hidden_dim=8, time_embed_dim=4, dropout=0.0)
    model = init_flow_model(cfg, seed=0)
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=(3, 4))
    x0 = rng.normal(0, 0.01, size=(3, 4))
    t = rng.uniform(size=3)
    eps = rng.normal(0, 0.001, size=(3, 4))
    _, grads = fm_loss_and_grads(model, x1, x0, t, eps)
    h = 1e-4
    worst = 0.0
    for name, p in model.params.items():
        flat = p.ravel()
        step = max(1, flat.size // 8)
        for idx in range(0, flat.size, step):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = fm_loss_and_grads(model, x1, x0, t, eps)
            flat[idx] = orig - h
            lm, _ = fm_loss_and_grads(model, x1, x0, t, eps)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].ravel()[idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    assert worst <= 1e-4, f"worst relative gradient error {worst:.2e}"
    print(f"PASS criterion 11: gradient check worst relative error {worst:.2e}")


def test_criterion_12_diversity(iris_run):
    out, _ = iris_run
    m = read_manifest(os.path.join(out, "metrics.txt"))
    miou = float(m["max_iou_mean"])
    min_l2 = float(m["generated_min_pairwise_l2"])
    assert miou < 0.98, f"mean max-IoU {miou} too high"
    assert min_l2 > 0, "duplicate generated vectors"
    csv_path = os.path.join(out, "diversity.csv")
    assert os.path.exists(csv_path)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "index,accuracy,max_iou" and len(lines) == 51
    print(f"PASS criterion 12: mean max-IoU {miou:.4f} (< 0.98), min pairwise "
          f"L2 {min_l2:.3e} (> 0); scatter CSV emitted "
          "(published 0.8187 +/- 0.0385 reported for context)")


def test_criterion_13_determinism_audit(tmp_path_factory):
    hashes = []
    for run in range(2):
        out, _ = _run(tmp_path_factory, f"determinism_{run}",
                      DETERMINISM_CONFIG)
        digest = {}
        for root, _, files in os.walk(out):
            for name in files:
                path = os.path.join(root, name)
                digest[os.path.relpath(path, out)] = sha256_file(path)
        hashes.append(digest)
    assert hashes[0] == hashes[1], "artifact hashes differ between reruns"
    print(f"PASS criterion 13: {len(hashes[0])} artifacts byte-identical "
          "across reruns")
