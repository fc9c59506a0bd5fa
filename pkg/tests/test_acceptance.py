"""Acceptance gate: eleven checks, one test (and one pass/fail line under
pytest -v) per criterion.

Checks 1-5 verify the numerical kernels against independent oracles at
fixed tolerances. Checks 6-9 reproduce the qualitative orderings the
package exists to demonstrate (forgetting, the self-training ladder,
the entropy-weight sweep, auxiliary-pool relatedness), each as medians
over five scenario seeds with wall-clock budgets. Checks 10-11 cover
protocol invariants and bit-level reproducibility.

The ordering checks retrain real models, so this file dominates the
suite's runtime (~10 minutes total).
"""

import math
import os
import statistics
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np

from incseg.continual import MethodConfig, run_scenario
from incseg.features import FEATURE_DIM
from incseg.metrics import accumulate, iou_per_class, iou_report, new_confusion
from incseg.model import (
    PROB_FLOOR,
    ModelParams,
    forward,
    gradient,
    init_params,
    self_entropy,
    softmax,
    total_loss,
)
from incseg.pseudo import PseudoLabelMap, fuse_conflict_reduction, fuse_naive
from incseg.relatedness import (
    FeatureStats,
    collection_stats,
    frechet_distance,
    sym_sqrt,
)
from incseg.scenes import (
    GeneratorShift,
    ScenarioSpec,
    build_aux_pool,
    build_sessions,
    default_universe,
    mask_labels,
    preset_partition,
)


def med(values):
    return float(statistics.median(values))


def final_report(partition, method, seed, gen, *, lam=1.0, self_train_epochs=1,
                 aux_shift=None):
    """Last-session IoU report for one (method, seed) scenario cell."""
    spec = ScenarioSpec(partition, "disjoint", images_per_session=40, seed=seed)
    cfg = MethodConfig(method, lam=lam, self_train_epochs=self_train_epochs)
    record = run_scenario(
        spec, gen, cfg, aux_size=240, eval_images=30, aux_shift=aux_shift
    )
    return record.session_reports[-1]


def test_criterion_01_fusion_oracle_equivalence():
    """Both fusion rules agree exactly with per-pixel case tables on
    10,000 random tuples over up to 6 classes, in under a second."""
    rng = np.random.default_rng(101)
    n = 10_000
    old_lab = rng.integers(0, 6, size=n)
    new_lab = rng.integers(0, 6, size=n)
    old_conf = rng.uniform(0, 1, size=n)
    new_conf = rng.uniform(0, 1, size=n)
    ties = rng.uniform(size=n) < 0.15  # exercise the tie-keeps-old branch
    new_conf[ties] = old_conf[ties]

    t0 = time.perf_counter()
    old = PseudoLabelMap(old_lab.reshape(100, 100), old_conf.reshape(100, 100))
    new = PseudoLabelMap(new_lab.reshape(100, 100), new_conf.reshape(100, 100))
    got_naive = fuse_naive(old, new).reshape(-1)
    got_cr = fuse_conflict_reduction(old, new).reshape(-1)

    for i in range(n):
        lo, ln, co, cn = old_lab[i], new_lab[i], old_conf[i], new_conf[i]
        want_naive = lo if lo > 0 else ln
        if lo > 0 and ln > 0:
            want_cr = ln if cn > co else lo
        else:
            want_cr = lo if lo > 0 else ln
        assert got_naive[i] == want_naive, i
        assert got_cr[i] == want_cr, i
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"fusion oracle took {elapsed:.2f}s"
    print(f"criterion 01 PASS: {n} tuples exact, {elapsed:.2f}s < 1s")


def numeric_gradient(params, feats, labels, lam, h=1e-5):
    grads = {}
    for name in ("w1", "b1", "w2", "b2"):
        base = getattr(params, name)
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            plus = base.copy()
            plus[idx] += h
            minus = base.copy()
            minus[idx] -= h
            up = total_loss(replace(params, **{name: plus}), feats, labels, lam)
            dn = total_loss(replace(params, **{name: minus}), feats, labels, lam)
            g[idx] = (up - dn) / (2 * h)
            it.iternext()
        grads[name] = g
    return grads


def test_criterion_02_gradient_matches_finite_differences():
    """Analytic gradients match central differences (h = 1e-5) to a max
    relative error below 1e-5 on 104 random instances, lambda in
    {0, 0.5, 1, 5}, in under 30 seconds.

    Error is measured relative to the gradient's largest coordinate:
    per-coordinate quotients at coordinates whose true derivative is
    ~1e-5 or smaller measure finite-difference roundoff (~1e-10 here),
    not gradient correctness. The unit suite adds the per-coordinate
    check with a scale floor plus an absolute bound.
    """
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    instances = 0
    for lam in (0.0, 0.5, 1.0, 5.0):
        for _ in range(26):
            k = int(rng.integers(2, 7))
            hidden = int(rng.integers(3, 7))
            n = int(rng.integers(3, 11))
            params = init_params(tuple(range(k)), rng, hidden)
            params = replace(
                params,
                w1=params.w1 * rng.uniform(0.5, 4.0),
                w2=params.w2 * rng.uniform(0.5, 4.0),
                b2=params.b2 + rng.normal(0, 0.3, size=k),
            )
            feats = rng.uniform(0, 1, size=(n, FEATURE_DIM))
            labels = rng.integers(0, k, size=n)
            analytic = gradient(params, feats, labels, lam)
            fd = numeric_gradient(params, feats, labels, lam)
            diff = max(
                np.abs(getattr(analytic, name) - fd[name]).max()
                for name in ("w1", "b1", "w2", "b2")
            )
            scale = max(np.abs(fd[name]).max() for name in ("w1", "b1", "w2", "b2"))
            worst = max(worst, diff / max(scale, 1e-12))
            instances += 1
    elapsed = time.perf_counter() - t0
    assert instances >= 100
    assert worst < 1e-5, f"max relative gradient error {worst:.3e}"
    assert elapsed < 30.0, f"gradient check took {elapsed:.1f}s"
    print(
        f"criterion 02 PASS: {instances} instances, max rel err "
        f"{worst:.2e} < 1e-5, {elapsed:.1f}s < 30s"
    )


def test_criterion_03_entropy_and_loss_identities():
    """self_entropy lies in [0, log K] on 10,000 random probability
    vectors; total_loss at lambda=0 equals the mean cross-entropy
    exactly; the uniform distribution's entropy is log K within 1e-12."""
    rng = np.random.default_rng(303)
    for _ in range(10_000):
        k = int(rng.integers(2, 9))
        q = rng.dirichlet(np.full(k, float(rng.uniform(0.1, 3.0))))
        h = self_entropy(q)
        assert 0.0 <= h <= math.log(k) + 1e-12

    for k in range(2, 11):
        h = self_entropy(np.full(k, 1.0 / k))
        assert abs(h - math.log(k)) < 1e-12
        one_hot = np.zeros(k)
        one_hot[0] = 1.0
        assert self_entropy(one_hot) == 0.0

    for trial in range(20):
        k = int(rng.integers(2, 7))
        params = init_params(tuple(range(k)), rng, int(rng.integers(3, 8)))
        feats = rng.uniform(0, 1, size=(int(rng.integers(2, 9)), FEATURE_DIM))
        labels = rng.integers(0, k, size=feats.shape[0])
        q = np.array([softmax(forward(params, f)) for f in feats])
        logq = np.log(np.maximum(q, PROB_FLOOR))
        mean_ce = -logq[np.arange(len(labels)), labels].mean()
        assert total_loss(params, feats, labels, 0.0) == mean_ce, trial
    print("criterion 03 PASS: entropy bounds on 10000 vectors, "
          "lambda=0 loss == mean CE exactly, uniform entropy within 1e-12")


def test_criterion_04_miou_matches_brute_force():
    """iou_report agrees with per-pixel TP/FP/FN counting on 100 random
    (pred, gt) pairs: counts exactly, IoU within 1e-12."""
    rng = np.random.default_rng(404)
    for trial in range(100):
        k = int(rng.integers(2, 8))
        h, w = int(rng.integers(5, 13)), int(rng.integers(5, 13))
        # restrict some pairs to a class subset so classes go undefined
        pool = rng.permutation(k)[: int(rng.integers(1, k + 1))]
        gt = rng.choice(pool, size=(h, w))
        pred = rng.choice(pool if trial % 3 else np.arange(k), size=(h, w))

        tp = [0] * k
        fp = [0] * k
        fn = [0] * k
        for i in range(h):
            for j in range(w):
                g, p = int(gt[i, j]), int(pred[i, j])
                if g == p:
                    tp[g] += 1
                else:
                    fp[p] += 1
                    fn[g] += 1

        cm = new_confusion(k)
        accumulate(cm, gt, pred)
        assert np.array_equal(np.diag(cm), tp), trial
        assert np.array_equal(cm.sum(axis=0) - np.diag(cm), fp), trial
        assert np.array_equal(cm.sum(axis=1) - np.diag(cm), fn), trial

        iou, defined = iou_per_class(cm)
        want_iou = {}
        for c in range(k):
            denom = tp[c] + fp[c] + fn[c]
            if denom:
                want_iou[c] = tp[c] / denom
        assert set(want_iou) == {c for c in range(k) if defined[c]}, trial
        for c, want in want_iou.items():
            assert abs(iou[c] - want) < 1e-12, trial
        report = iou_report(cm)
        assert abs(report.overall - np.mean(list(want_iou.values()))) < 1e-12, trial
    print("criterion 04 PASS: 100 pairs, exact counts, IoU within 1e-12")


def test_criterion_05_frechet_kernel():
    """sym_sqrt reconstructs random 8x8 SPD matrices to 1e-8; the
    distance is zero on identical stats, symmetric within 1e-9, and
    matches the diagonal closed form within 1e-9."""
    rng = np.random.default_rng(505)

    def spd(scale=1.0):
        b = rng.normal(0, scale, size=(8, 8))
        return b.T @ b + 1e-3 * np.eye(8)

    worst_resid = 0.0
    for _ in range(20):
        m = spd(float(rng.uniform(0.2, 2.0)))
        r = sym_sqrt(m)
        worst_resid = max(worst_resid, float(np.abs(r @ r - m).max()))
    assert worst_resid < 1e-8, f"sym_sqrt residual {worst_resid:.3e}"

    for _ in range(10):
        a = FeatureStats(rng.normal(size=8), spd(), 16)
        b = FeatureStats(rng.normal(size=8), spd(), 16)
        assert frechet_distance(a, a) < 1e-9
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9

    worst_diag = 0.0
    for _ in range(20):
        mu_a, mu_b = rng.normal(size=8), rng.normal(size=8)
        va = rng.uniform(0.05, 2.0, size=8)
        vb = rng.uniform(0.05, 2.0, size=8)
        want = ((mu_a - mu_b) ** 2).sum() + ((np.sqrt(va) - np.sqrt(vb)) ** 2).sum()
        got = frechet_distance(
            FeatureStats(mu_a, np.diag(va), 9), FeatureStats(mu_b, np.diag(vb), 9)
        )
        worst_diag = max(worst_diag, abs(got - float(want)))
    assert worst_diag < 1e-9, f"diagonal closed-form gap {worst_diag:.3e}"
    print(
        f"criterion 05 PASS: residual {worst_resid:.1e} < 1e-8, identical/"
        f"symmetry within 1e-9, diagonal gap {worst_diag:.1e} < 1e-9"
    )


def test_criterion_06_forgetting_and_recovery():
    """3-1x2 disjoint, medians over 5 seeds: fine-tuning forgets the
    first three classes (>= 20 points below Joint) and self-training
    with conflict reduction and the entropy bonus restores them
    (>= 10 points above fine-tuning). Budget: 5 minutes."""
    t0 = time.perf_counter()
    gen = default_universe()
    partition = preset_partition("3-1×2")
    olds = {}
    for method in ("FT", "Joint", "ST+CR+MS"):
        olds[method] = med(
            [
                100.0 * final_report(partition, method, s, gen).group_miou["1-3"]
                for s in (1, 2, 3, 4, 5)
            ]
        )
    elapsed = time.perf_counter() - t0
    assert olds["Joint"] - olds["FT"] >= 20.0, olds
    assert olds["ST+CR+MS"] >= olds["FT"] + 10.0, olds
    assert elapsed < 300.0, f"forgetting check took {elapsed:.0f}s"
    print(
        f"criterion 06 PASS: old-class mIoU FT {olds['FT']:.1f} vs Joint "
        f"{olds['Joint']:.1f} (gap >= 20), ST+CR+MS {olds['ST+CR+MS']:.1f} "
        f"(>= FT+10), {elapsed:.0f}s < 300s"
    )


def test_criterion_07_self_training_ladder():
    """3-2 disjoint, medians over 5 seeds: FT < ST by >= 5 points, and
    each added component is monotone within a 1-point slack band.
    Budget: 5 minutes."""
    t0 = time.perf_counter()
    gen = default_universe()
    partition = preset_partition("3-2")
    alls = {}
    for method in ("FT", "ST", "ST+CR", "ST+CR+MS"):
        alls[method] = med(
            [
                100.0 * final_report(partition, method, s, gen).overall
                for s in (1, 2, 3, 4, 5)
            ]
        )
    elapsed = time.perf_counter() - t0
    assert alls["ST"] - alls["FT"] >= 5.0, alls
    assert alls["ST"] <= alls["ST+CR"] + 1.0, alls
    assert alls["ST+CR"] <= alls["ST+CR+MS"] + 1.0, alls
    assert elapsed < 300.0, f"ladder took {elapsed:.0f}s"
    print(
        "criterion 07 PASS: overall mIoU "
        + " -> ".join(f"{m} {alls[m]:.1f}" for m in ("FT", "ST", "ST+CR", "ST+CR+MS"))
        + f", {elapsed:.0f}s < 300s"
    )


def test_criterion_08_entropy_weight_sweep():
    """3-2 disjoint, medians over 5 seeds: lambda=1 beats (or ties)
    lambda=5 on overall mIoU. Budget: 10 minutes."""
    t0 = time.perf_counter()
    gen = default_universe()
    partition = preset_partition("3-2")
    by_lam = {
        lam: med(
            [
                100.0 * final_report(partition, "ST+CR+MS", s, gen, lam=lam).overall
                for s in (1, 2, 3, 4, 5)
            ]
        )
        for lam in (1.0, 5.0)
    }
    elapsed = time.perf_counter() - t0
    assert by_lam[1.0] >= by_lam[5.0], by_lam
    assert elapsed < 600.0, f"lambda sweep took {elapsed:.0f}s"
    print(
        f"criterion 08 PASS: lambda=1 {by_lam[1.0]:.1f} >= lambda=5 "
        f"{by_lam[5.0]:.1f}, {elapsed:.0f}s < 600s"
    )


def test_criterion_09_pool_relatedness_ordering():
    """With a universe of only the scenario classes, the unshifted aux
    pool is closer to the training images (Frechet, 5/5 seeds) and
    self-training with the hue-shifted pool scores lower median overall
    mIoU than with the unshifted pool."""
    gen = default_universe(5)
    partition = preset_partition("3-2")
    shift = GeneratorShift(hue_shift=0.4)
    seeds = (1, 2, 3, 4, 5)

    for s in seeds:
        spec = ScenarioSpec(partition, "disjoint", images_per_session=40, seed=s)
        train = [it.image for sess in build_sessions(spec, gen) for it in sess.items]
        stats = collection_stats(train)
        pool_gen = replace(gen, seed=s)
        d_near = frechet_distance(
            stats, collection_stats(build_aux_pool(pool_gen, 240, None).images)
        )
        d_far = frechet_distance(
            stats, collection_stats(build_aux_pool(pool_gen, 240, shift).images)
        )
        assert d_near < d_far, (s, d_near, d_far)

    scores = {
        tag: med(
            [
                100.0
                * final_report(partition, "ST+CR+MS", s, gen, aux_shift=sh).overall
                for s in seeds
            ]
        )
        for tag, sh in (("unshifted", None), ("shifted", shift))
    }
    assert scores["shifted"] < scores["unshifted"], scores
    print(
        f"criterion 09 PASS: Frechet ordered 5/5 seeds; median overall "
        f"mIoU shifted {scores['shifted']:.1f} < unshifted "
        f"{scores['unshifted']:.1f}"
    )


def test_criterion_10_protocol_invariants():
    """On every shipped preset and both settings: disjoint sessions show
    no future-class pixels, overlapped session images each contain a
    current-class pixel, and the masking postcondition holds on every
    item."""
    gen = default_universe()
    checked = 0
    for preset in ("4-1", "3-2", "3-1x2"):
        partition = preset_partition(preset)
        for setting in ("disjoint", "overlapped"):
            spec = ScenarioSpec(partition, setting, images_per_session=40, seed=1)
            seen = set()
            for session in build_sessions(spec, gen):
                current = set(session.current_classes)
                seen |= current
                for item in session.items:
                    if setting == "disjoint":
                        future = set(np.unique(item.gt_labels)) - {0} - seen
                        assert not future, (preset, session.session_index, future)
                    else:
                        assert np.isin(item.gt_labels, sorted(current)).any(), (
                            preset,
                            session.session_index,
                        )
                    assert np.array_equal(
                        item.labels, mask_labels(item.gt_labels, current)
                    )
                    checked += 1
    print(f"criterion 10 PASS: {checked} session items across presets x settings")


def test_criterion_11_bit_identical_reruns(tmp_path):
    """Two single-threaded runs of the same config produce bit-identical
    checkpoints and CSVs."""
    env = dict(os.environ)
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        env[var] = "1"
    argv = [
        sys.executable, "-m", "incseg", "run",
        "--methods", "FT,ST+CR+MS",
        "--seeds", "1",
        "--partition", "1,2|3",
        "--images-per-session", "3",
        "--eval-images", "2",
        "--epochs", "5",
        "--later-epochs", "5",
        "--batch-pixels", "64",
        "--aux-size", "4",
    ]
    for sub in ("a", "b"):
        proc = subprocess.run(
            argv + ["--out", str(tmp_path / sub)],
            env=env,
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr

    compared = 0
    for root, _, files in os.walk(tmp_path / "a"):
        for name in files:
            if name == "timings.txt":
                continue
            a_path = os.path.join(root, name)
            b_path = a_path.replace(str(tmp_path / "a"), str(tmp_path / "b"), 1)
            with open(a_path, "rb") as fa, open(b_path, "rb") as fb:
                assert fa.read() == fb.read(), a_path
            compared += 1
    assert any(f.endswith(".ckpt") for f in os.listdir(tmp_path / "a" / "ft_seed1"))
    print(f"criterion 11 PASS: {compared} artifacts bit-identical across reruns")
