"""Exit criteria for the package, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``; a pass/fail line per
criterion is also printed in the terminal summary. The synthetic
end-to-end criteria train real models and take roughly 20 minutes on a
single CPU core.
"""

import math
import time

import numpy as np
import pytest
import torch

from rama.config import ModelConfig, TrainConfig
from rama.guidance import contrastive_loss
from rama.heatmap import render_overlay, roi_contrast, subject_heatmaps
from rama.metrics import auc
from rama.network import RamaNet
from rama.optim import Adam
from rama.phantom import generate_dataset
from rama.radiomics import first_order, glcm_features, shape_features
from rama.selfcheck import end_to_end_gradcheck
from rama.training import ablate, overfit_probe, prepare, train, with_radiomics
from rama.volume import load_subject, read_manifest

from acceptance_log import check
from oracles import adam_scalar, auc_pairwise, glcm_oracle, nt_xent_naive

D = torch.float64


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic200")
    rows = generate_dataset(200, 0.31, 0, root, dims=(32, 32, 16))
    return root, rows


@pytest.fixture(scope="module")
def prepared200(synthetic):
    return prepare(synthetic[0], ModelConfig())


@pytest.fixture(scope="module")
def full_run(prepared200):
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    res = train(prepared200, TrainConfig(epochs=30))
    return res, time.perf_counter() - t0


# ---------------------------------------------------------------- criteria

def test_c1_gradient_correctness():
    t0 = time.perf_counter()
    err, n_params = end_to_end_gradcheck(probes=60)
    elapsed = time.perf_counter() - t0
    check("C1", err <= 1e-4 and elapsed < 60,
          f"end-to-end gradcheck max rel error {err:.2e} (<= 1e-4), {n_params} params, {elapsed:.1f}s (< 60s)")


def test_c2_contrastive_closed_forms():
    v = torch.ones(2, 4, dtype=D)
    uniform = contrastive_loss(v, v.clone(), 0.1).item()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for _ in range(100):
        b = int(rng.integers(2, 9))
        p = int(rng.integers(2, 17))
        t = float(rng.uniform(0.05, 1.0))
        vi, vr = rng.standard_normal((b, p)), rng.standard_normal((b, p))
        worst = max(worst, abs(contrastive_loss(torch.tensor(vi), torch.tensor(vr), t).item() - nt_xent_naive(vi, vr, t)))
    e = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=D)
    extreme = [contrastive_loss(e, e.clone(), 1e-4).item(), contrastive_loss(e, -e, 1e-4).item()]
    ok = abs(uniform - math.log(3)) <= 1e-9 and worst <= 1e-9 and all(math.isfinite(x) for x in extreme)
    check("C2", ok, f"|L - ln3| = {abs(uniform - math.log(3)):.1e}, naive-oracle max diff {worst:.1e} "
                    f"over 100 batches, finite at sim/t = +-1e4: {extreme}")


def test_c3_shape_laws():
    rng = np.random.default_rng(3)
    failures = []
    for _ in range(50):
        w, h, d = (8 * int(k) for k in rng.integers(1, 7, 3))
        cfg = ModelConfig(input_dims=(w, h, d), widths=(2, 2, 4), norm_groups=2, d_dim=8, heads=2, layers=1)
        model = RamaNet(cfg, seed=int(rng.integers(1000)))
        x = {m: torch.randn(1, 4, d, h, w) for m in cfg.modalities}
        with torch.no_grad():
            out = model(x, keep_tokens=True)
        n = (h // 8) * (w // 8) * (d // 8)
        for m in cfg.modalities:
            if tuple(out.features[m].shape[2:]) != (d // 8, h // 8, w // 8):
                failures.append((w, h, d, m))
        if out.tokens.shape[1] != 1 + 2 * n:
            failures.append((w, h, d, "tokens"))
    check("C3", not failures, f"50 random sizes: h=H/8, w=W/8, d=D/8 and length 1+2N; failures={failures}")


def test_c4_radiomics_oracles():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        shape = tuple(int(s) for s in rng.integers(2, 7, 3))
        x = rng.standard_normal(shape)
        m = rng.random(shape) > 0.3
        m.flat[0] = True
        m.flat[-1] = True
        worst = max(worst, float(np.abs(glcm_features(x, m, 16) - glcm_oracle(x, m, 16)).max()))

    x = rng.standard_normal((14, 14, 14))
    m = np.zeros((14, 14, 14), dtype=bool)
    m[4:10, 3:11, 5:9] = rng.random((6, 8, 4)) > 0.25
    trans = all(
        np.array_equal(f(x, m), f(np.roll(x, s, (0, 1, 2)), np.roll(m, s, (0, 1, 2))))
        for s in ((1, 2, -3), (-2, 0, 4))
        for f in (lambda a, b: first_order(a, b, 32), lambda a, b: glcm_features(a, b, 32),
                  lambda a, b: shape_features(b, (1.0, 1.0, 1.0)))
    )
    rot = all(
        np.array_equal(first_order(x, m, 32), first_order(np.rot90(x, k, ax), np.rot90(m, k, ax), 32))
        and np.array_equal(glcm_features(x, m, 32), glcm_features(np.rot90(x, k, ax), np.rot90(m, k, ax), 32))
        and np.array_equal(shape_features(m, (1, 1, 1))[:5], shape_features(np.rot90(m, k, ax), (1, 1, 1))[:5])
        for ax in ((0, 1), (1, 2), (0, 2)) for k in (1, 2, 3)
    )
    cube = np.zeros((12, 12, 12))
    cube[1:11, 1:11, 1:11] = 1
    sph = shape_features(cube, (1, 1, 1))[3]
    ok = worst <= 1e-12 and trans and rot and abs(sph - 0.806) <= 1e-3
    check("C4", ok, f"GLCM oracle max diff {worst:.1e} (<= 1e-12) on 50 ROIs; translation exact={trans}; "
                    f"90-degree rotation exact={rot}; cube sphericity {sph:.4f}")


def test_c5_metric_oracles():
    rng = np.random.default_rng(5)
    worst_auc = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 60))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        worst_auc = max(worst_auc, abs(auc(s, y) - auc_pairwise(s, y)))
    grads = rng.standard_normal((100, 8))
    p = torch.tensor(rng.standard_normal(8), dtype=D)
    start = p.clone()
    opt = Adam({"p": p}, lr=1e-3)
    for g in grads:
        p.grad = torch.tensor(g)
        opt.step()
    worst_adam = max(abs(p[k].item() - adam_scalar(start[k].item(), grads[:, k], 1e-3)) for k in range(8))
    check("C5", worst_auc <= 1e-12 and worst_adam <= 1e-12,
          f"AUC vs pairwise oracle max diff {worst_auc:.1e}; Adam vs scalar reference max diff {worst_adam:.1e} (100 steps)")


def _logistic_auc(features, labels):
    x = np.column_stack([np.ones(len(labels)), (features - features.mean(0)) / features.std(0)])
    y = np.asarray(labels, dtype=float)
    w = np.zeros(x.shape[1])
    for _ in range(50):  # Newton / IRLS with a small ridge for separable data
        p = 1 / (1 + np.exp(-x @ w))
        hess = x.T @ (x * (p * (1 - p))[:, None]) + 1e-3 * np.eye(x.shape[1])
        w += np.linalg.solve(hess, x.T @ (y - p) - 1e-3 * w)
    return auc(x @ w, y)


def test_c6_synthetic_end_to_end(synthetic, prepared200, full_run):
    root, rows = synthetic
    stats, labels = [], []
    for row in read_manifest(root):
        s = load_subject(row)
        m = s.mask.bool()
        tumor = s.dce.data[1][m]
        stats.append([s.adc.data[0][m].mean(), tumor.var() / tumor.mean() ** 2])
        labels.append(row.label)
    floor = _logistic_auc(np.array(stats), labels)

    res, elapsed = full_run
    mean_auc = res.report.mean_auc

    ids = sorted(prepared200)[:8]
    small = {i: prepared200[i] for i in ids}
    # make sure both classes are present in the probe set
    if len({p.label for p in small.values()}) < 2:
        pos = next(i for i in sorted(prepared200) if prepared200[i].label == 1)
        small[pos] = prepared200[pos]
        small.pop(ids[0])
    steps, acc = overfit_probe(small, TrainConfig(), max_steps=500)

    ok = floor >= 0.9 and mean_auc >= 0.80 and elapsed < 30 * 60 and steps is not None
    check("C6", ok, f"radiomics-oracle AUC {floor:.3f} (>= 0.9); 5-fold mean val AUC {mean_auc:.4f} "
                    f"± {res.report.std_auc:.4f} (>= 0.80), accuracy {res.report.mean_accuracy:.4f}, "
                    f"{elapsed / 60:.1f} min (< 30); overfit probe acc {acc:.2f} after {steps} steps (<= 500)")


def test_c7_ablation_structure(prepared200, tmp_path):
    ids = sorted(prepared200)[:60]
    data = {i: prepared200[i] for i in ids}
    base = TrainConfig()  # default model and 30 epochs; the 60-subject subset keeps AUC off the ceiling
    reports = ablate(data, base, out_csv=tmp_path / "ablation.csv")
    lines = (tmp_path / "ablation.csv").read_text().splitlines()[1:]
    n_t2 = sum(line.startswith("table2,") for line in lines)
    n_t1 = sum(line.startswith("table1,") for line in lines)
    shared = len({tuple((f["n_val"], f["n_val_pos"]) for f in r.folds) for r in reports.values()}) == 1

    full, plain = [reports["t2_full"].mean_auc], [reports["t2_plain"].mean_auc]
    for seed in (1, 2):
        r = ablate(data, base.replace(seed=seed), variants=["t2_full", "t2_plain"])
        full.append(r["t2_full"].mean_auc)
        plain.append(r["t2_plain"].mean_auc)
    inversions = [s for s, (a, b) in enumerate(zip(full, plain)) if a < b]
    ok = n_t2 == 4 and n_t1 == 6 and shared and np.mean(full) >= np.mean(plain)
    check("C7", ok, f"{n_t2} multimodal rows, {n_t1} single-modality rows, shared folds={shared}; "
                    f"guidance+transformer mean AUC {np.mean(full):.4f} vs plain {np.mean(plain):.4f} "
                    f"over 3 seeds; per-seed inversions at seeds {inversions}"
                    + (" (tie at the AUC ceiling: no ordering evidence)" if min(full + plain) == 1.0 else ""))


def test_c8_interpretability(prepared200, full_run, tmp_path):
    res, _ = full_run
    wins = {"DCE": [], "ADC": []}
    in_range = True
    for fold, fr in zip(res.folds, res.fold_results):
        model = RamaNet(TrainConfig().model, seed=0)
        model.load_state_dict(fr.best_state)
        for sid in fold.val:
            p = prepared200[sid]
            for mod, (grid, up) in subject_heatmaps(model, p, fr.standardizers).items():
                in_range &= bool(np.all((grid >= -1) & (grid <= 1)) and np.all((up >= -1) & (up <= 1)))
                inside, outside = roi_contrast(up, p.mask)
                wins[mod].append(inside > outside)
    frac = {m: float(np.mean(v)) for m, v in wins.items()}

    sid = res.folds[0].val[0]
    model = RamaNet(TrainConfig().model, seed=0)
    model.load_state_dict(res.fold_results[0].best_state)
    maps = subject_heatmaps(model, prepared200[sid], res.fold_results[0].standardizers)
    a = render_overlay(prepared200[sid].images["DCE"][0], maps["DCE"][1], tmp_path / "a" / sid)
    b = render_overlay(prepared200[sid].images["DCE"][0], maps["DCE"][1], tmp_path / "b" / sid)
    identical = all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))

    ok = all(f >= 0.8 for f in frac.values()) and in_range and identical
    check("C8", ok, f"fraction of validation subjects with ROI mean > outside mean: "
                    f"DCE {frac['DCE']:.3f}, ADC {frac['ADC']:.3f} (>= 0.8 each); values in [-1,1]={in_range}; "
                    f"PNG bytes identical={identical}")


def test_c9_determinism_and_leakage(prepared200):
    ids = sorted(prepared200)[:30]
    data = {i: prepared200[i] for i in ids}
    cfg = TrainConfig(epochs=2, folds=3, model=ModelConfig(widths=(4, 8, 8), d_dim=16, heads=2, layers=1,
                                                           proj_dim=16, rad_hidden=16))
    a, b = train(data, cfg), train(data, cfg)
    same_report = a.report.to_json().encode() == b.report.to_json().encode()

    poison = {sid: {m: np.full(25, -1e6) for m in ("DCE", "ADC")} for sid in a.folds[0].val}
    c = train(with_radiomics(data, poison), cfg, folds=a.folds)
    ra, rc = a.fold_results[0], c.fold_results[0]
    same_traj = [h["train_loss"] for h in ra.history] == [h["train_loss"] for h in rc.history] and all(
        torch.equal(ra.final_state[k], rc.final_state[k]) for k in ra.final_state)
    check("C9", same_report and same_traj,
          f"repeat run MetricsReport bit-identical={same_report}; poisoned validation radiomics leave "
          f"the training trajectory bit-identical={same_traj}")
