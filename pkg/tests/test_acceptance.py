"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (run with ``pytest -s`` to see them
live).  The desk-scale attack experiment is shared between the efficacy and
cleanup criteria through a session fixture.
"""

import math
import os
import time

import numpy as np
import pytest

from rlab.agent import ActionCodec, DQNAgent, DuelingQNet, q_values
from rlab.engine import PDParams, evaluate, greedy_policy, pd_untargeted, random_policy, train_agent
from rlab.filters import (
    DistortionLedger,
    FilterSpec,
    apply_filter_patch,
    revert_patch,
)
from rlab.fixtures import (
    DESK_BUDGET,
    DESK_ROOT_SEED,
    build_desk_victim,
    desk_agent_config,
    desk_filters,
    synthetic_blob_dataset,
)
from rlab.image import make_patch_grid
from rlab.seeding import derive_seed, rng_from
from rlab.sensitivity import StateVector, mask_seed, probe_add_sensitivity
from rlab.target import ClassifierHandle, ReferenceModel, accuracy, top_label

from conftest import random_image

ALL_KINDS = ("gaussian_noise", "gaussian_blur", "brightness", "dead_pixel")


def report(criterion: str, passed: bool, detail: str = "") -> None:
    marker = "PASS" if passed else "FAIL"
    print(f"[{marker}] {criterion}" + (f" -- {detail}" if detail else ""), flush=True)
    assert passed, f"{criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. exact reversion
# ---------------------------------------------------------------------------

def test_exact_reversion_suite():
    start = time.time()
    rng = rng_from("acceptance-reversion")
    failures = 0
    for case in range(1000):
        kind = ALL_KINDS[case % len(ALL_KINDS)]
        channels = int(rng.choice([1, 3]))
        image = random_image(rng, (channels, 8, 8))
        grid = make_patch_grid(image, 2)
        ledger = DistortionLedger()
        patch = int(rng.integers(grid.patch_count))
        seed = int(rng.integers(2**63))
        distorted, entry = apply_filter_patch(image, grid, patch, FilterSpec(kind), seed)
        ledger.push(entry)
        restored = revert_patch(distorted, grid, ledger, patch)
        if not np.array_equal(restored, image):
            failures += 1

    # multi-patch: distort 8 distinct patches, revert in random order
    for case in range(50):
        image = random_image(rng, (3, 8, 8))
        grid = make_patch_grid(image, 2)
        ledger = DistortionLedger()
        working = image
        patches = [int(p) for p in rng.choice(grid.patch_count, size=8, replace=False)]
        for i, patch in enumerate(patches):
            spec = FilterSpec(ALL_KINDS[(case + i) % len(ALL_KINDS)])
            working, entry = apply_filter_patch(working, grid, patch, spec, seed=case * 100 + i)
            ledger.push(entry)
        rng.shuffle(patches)
        for patch in patches:
            working = revert_patch(working, grid, ledger, patch)
        if not np.array_equal(working, image):
            failures += 1

    elapsed = time.time() - start
    report(
        "exact reversion (1000 single + 50 multi-patch cases)",
        failures == 0 and elapsed < 30.0,
        f"failures={failures}, elapsed={elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. probability dilution correctness
# ---------------------------------------------------------------------------

def test_pd_correctness():
    params = PDParams(top_n=1)
    e1 = math.exp(-1)
    v1 = pd_untargeted([e1, e1, 1 - 2 * e1], 0, params)
    ok_symmetric = abs(v1) <= 1e-12

    v2 = pd_untargeted([0.5, 0.25, 0.25], 0, params)
    ok_oracle = abs(v2 - (-0.72135)) <= 1e-4

    rng = rng_from("acceptance-pd")
    monotone_params = PDParams(top_n=5)
    violations = 0
    for _ in range(10_000):
        competitors = rng.uniform(0.05, 0.07, size=5)
        high, low = sorted(rng.uniform(0.1, 0.5, size=2), reverse=True)
        if high - low < 1e-9:
            continue
        values = []
        for p_g in (high, low):
            filler = (1.0 - competitors.sum() - p_g) / 40
            vec = np.concatenate([[p_g], competitors, np.full(40, filler)])
            values.append(pd_untargeted(vec, 0, monotone_params))
        if not values[1] > values[0]:
            violations += 1

    report(
        "probability dilution correctness",
        ok_symmetric and ok_oracle and violations == 0,
        f"pd(e-1,e-1)={v1:.2e}, pd(0.5,0.25)={v2:.6f}, monotonicity violations={violations}/10000",
    )


# ---------------------------------------------------------------------------
# 3. dueling identity and backprop gradients
# ---------------------------------------------------------------------------

def test_dueling_identity_and_gradients():
    rng = rng_from("acceptance-dueling")
    worst_identity = 0.0
    for trial in range(20):
        net = DuelingQNet(6, 5, hidden=(8,), seed=trial)
        state = rng.normal(size=6)
        before = q_values(net, state)
        net.params["ba"] += float(rng.uniform(-20, 20))
        after = q_values(net, state)
        worst_identity = max(worst_identity, float(np.max(np.abs(after - before))))
    ok_identity = worst_identity <= 1e-12

    worst_rel = 0.0
    h = 1e-5
    for trial in range(50):
        net = DuelingQNet(3, 3, hidden=(4,), seed=1000 + trial)
        states = rng.normal(size=(2, 3))
        actions = rng.integers(3, size=2)
        targets = rng.normal(size=2)

        def loss_value():
            q, _ = net.forward(states)
            err = q[np.arange(2), actions] - targets
            return float(np.mean(err**2))

        q, cache = net.forward(states)
        err = q[np.arange(2), actions] - targets
        dq = np.zeros_like(q)
        dq[np.arange(2), actions] = 2.0 * err / 2
        grads = net.backward(cache, dq)
        for key, grad in grads.items():
            flat_param = net.params[key].reshape(-1)
            flat_grad = np.asarray(grad).reshape(-1)
            for j in range(flat_param.size):
                orig = flat_param[j]
                flat_param[j] = orig + h
                up = loss_value()
                flat_param[j] = orig - h
                down = loss_value()
                flat_param[j] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(flat_grad[j]), 1e-8)
                worst_rel = max(worst_rel, abs(fd - flat_grad[j]) / denom)
    ok_grad = worst_rel <= 1e-4

    report(
        "dueling identity + finite-difference gradients (50 nets)",
        ok_identity and ok_grad,
        f"identity drift={worst_identity:.2e}, worst gradient rel err={worst_rel:.2e}",
    )


# ---------------------------------------------------------------------------
# 4. sensitivity probe vs exhaustive oracle
# ---------------------------------------------------------------------------

def test_sensitivity_probe_oracle():
    rng = rng_from("acceptance-probe")
    spec = FilterSpec("gaussian_noise", {"variance": 0.02})
    mismatches = 0
    for case in range(100):
        image = random_image(rng, (1, 8, 8))
        grid = make_patch_grid(image, 2)
        victim = ReferenceModel.mlp((1, 8, 8), num_classes=3, hidden=6, seed=case)
        classifier = ClassifierHandle.in_process(victim)
        base = classifier.classify_batch([image])[0]
        gt = int(np.argmax(base))
        step_seed = derive_seed("acceptance", case)

        deltas = probe_add_sensitivity(image, grid, spec, classifier, gt, step_seed, base_probs=base)

        best_patch, best_delta = -1, -np.inf
        for i in range(grid.patch_count):
            candidate, _ = apply_filter_patch(image, grid, i, spec, mask_seed(step_seed, i, spec.kind))
            drop = float(base[gt] - classifier.classify_batch([candidate])[0][gt])
            if drop > best_delta:
                best_patch, best_delta = i, drop
        if int(np.argmax(deltas)) != best_patch:
            mismatches += 1

    report(
        "sensitivity probe top-1 matches exhaustive oracle (100 cases)",
        mismatches == 0,
        f"mismatches={mismatches}/100",
    )


# ---------------------------------------------------------------------------
# 5 + 6. desk-scale attack efficacy and cleanup properties
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run():
    start = time.time()
    images, labels = synthetic_blob_dataset(110, seed=7)
    victim = build_desk_victim(images, labels, seed=7)
    clean_accuracy = accuracy(victim, images, labels)
    classifier = ClassifierHandle.in_process(victim)
    specs = desk_filters()
    codec = ActionCodec(num_filters=len(specs), n_max=8)

    agent = DQNAgent(
        StateVector.length(), codec, desk_agent_config(),
        seed=derive_seed(DESK_ROOT_SEED, "agent"),
    )
    outcome = train_agent(
        images, labels, classifier, specs, agent,
        budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED,
    )

    flat = np.stack([im.reshape(-1) for im in images])
    correct = np.argmax(victim.forward(flat), axis=1) == np.asarray(labels)
    held_out = [i for i in outcome.eval_indices if correct[i]][:20]

    trained = evaluate(
        images, labels, classifier, specs, greedy_policy(agent),
        budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED, indices=held_out,
    )
    baseline = evaluate(
        images, labels, classifier, specs, random_policy(codec),
        budget=DESK_BUDGET, patch_size=2, root_seed=DESK_ROOT_SEED, indices=held_out,
    )
    return {
        "elapsed": time.time() - start,
        "clean_accuracy": clean_accuracy,
        "held_out": held_out,
        "trained": trained,
        "baseline": baseline,
        "classifier": classifier,
        "images": images,
        "labels": labels,
    }


def test_desk_scale_attack_efficacy(desk_run):
    run = desk_run
    ok_victim = run["clean_accuracy"] >= 0.95
    ok_count = len(run["held_out"]) == 20

    trained, baseline = run["trained"], run["baseline"]
    asr = sum(r.status == "success" for r in trained) / len(trained)
    mean_steps = float(np.mean([r.steps for r in trained]))
    baseline_steps = float(np.mean([r.steps for r in baseline]))
    mean_l2 = float(np.mean([r.l2 for r in trained]))
    baseline_l2 = float(np.mean([r.l2 for r in baseline]))

    ok = (
        ok_victim
        and ok_count
        and asr == 1.0
        and mean_steps < baseline_steps
        and mean_l2 <= baseline_l2
        and run["elapsed"] < 600.0
    )
    report(
        "desk-scale efficacy (ASR, steps vs random, post-cleanup L2)",
        ok,
        f"victim acc={run['clean_accuracy']:.3f}, ASR={asr:.2f}, "
        f"steps {mean_steps:.2f} vs {baseline_steps:.2f}, "
        f"L2 {mean_l2:.3f} vs {baseline_l2:.3f}, elapsed={run['elapsed']:.0f}s",
    )


def test_cleanup_properties(desk_run):
    run = desk_run
    classifier = run["classifier"]
    violations = 0
    episodes = 0
    for result in run["trained"] + run["baseline"]:
        if result.status != "success":
            continue
        episodes += 1
        if result.post_cleanup_l2 > result.pre_cleanup_l2 + 1e-12:
            violations += 1
            continue
        probs = classifier.classify_batch([result.adversarial])[0]
        if top_label(probs) == result.gt_class:
            violations += 1
    report(
        "cleanup monotone and adversariality-preserving",
        episodes > 0 and violations == 0,
        f"episodes={episodes}, violations={violations}",
    )


# ---------------------------------------------------------------------------
# 7. metrics arithmetic
# ---------------------------------------------------------------------------

def test_metrics_arithmetic():
    from rlab.metrics import CorruptionErrorMatrix, mce_and_degradation, uce

    ok_uce = uce([0.0, 0.1, 0.2, 0.3, 0.4]) == 0.2

    uniform = CorruptionErrorMatrix(
        corruptions=[f"c{i}" for i in range(15)],
        errors=np.full((15, 5), 0.2),
        clean_error=0.1,
    )
    mce, degradation = mce_and_degradation(uniform)
    ok_uniform = mce == 0.2 and abs(degradation - 0.1) <= 1e-15

    rng = rng_from("acceptance-metrics")
    errors = rng.uniform(size=(15, 5))
    matrix = CorruptionErrorMatrix(
        corruptions=[f"c{i}" for i in range(15)], errors=errors, clean_error=0.07
    )
    # independent spreadsheet-style oracle: plain Python arithmetic
    per_corruption = [sum(row) / 5 for row in errors.tolist()]
    expected_mce = sum(per_corruption) / 15
    got_mce, got_degradation = mce_and_degradation(matrix)
    ok_random = (
        abs(got_mce - expected_mce) <= 1e-12
        and abs(got_degradation - (expected_mce - 0.07)) <= 1e-12
    )

    report(
        "metrics arithmetic (uCE, degradation, 15x5 spreadsheet oracle)",
        ok_uce and ok_uniform and ok_random,
        f"uce ramp={'exact' if ok_uce else 'off'}, spreadsheet |diff|={abs(got_mce - expected_mce):.2e}",
    )


# ---------------------------------------------------------------------------
# 8. determinism of cmd_attack
# ---------------------------------------------------------------------------

def test_cmd_attack_determinism(tmp_path):
    from rlab.cli import RunConfig, main, save_config
    from rlab.fixtures import make_desk_fixture

    dataset_dir, weights, _ = make_desk_fixture(tmp_path, count=20)
    names = sorted(p for p in os.listdir(dataset_dir) if p.endswith(".raw"))[:3]
    image_paths = [os.path.join(dataset_dir, n) for n in names]

    blobs = []
    for run in range(2):
        out = tmp_path / f"out{run}"
        config = RunConfig(
            weights=str(weights),
            filters=[FilterSpec("gaussian_noise", {"variance": 0.05})],
            budget=DESK_BUDGET,
            seed=17,
            out_dir=str(out),
        )
        config_path = tmp_path / f"config{run}.json"
        save_config(config_path, config)
        rc = main([
            "attack", *image_paths, "--config", str(config_path),
            "--labels", os.path.join(dataset_dir, "labels.csv"),
        ])
        assert rc == 0
        blobs.append((out / "summary.json").read_bytes())

    report(
        "cmd_attack determinism (byte-identical summary JSON)",
        blobs[0] == blobs[1],
        f"bytes={len(blobs[0])} vs {len(blobs[1])}",
    )
