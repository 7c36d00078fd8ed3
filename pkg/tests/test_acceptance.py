"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime.  Tolerances and time budgets are fixed
here, not configurable.  Run with ``pytest -s tests/test_acceptance.py`` to
see the per-criterion lines.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from prism_eval.core_io import ActivationStack, CameraPose, EmbeddingSet
from prism_eval import head as head_mod
from prism_eval.head import (
    HeadGradients,
    MlpHead,
    TrainConfig,
    backward,
    batch_loss,
    train_head,
    apply_head,
    build_triplet_pool,
)
from prism_eval.mask_geometry import (
    BinaryMask,
    StructuringElement,
    camera_from_pose,
    epipolar_mask,
    grid_pose,
    misaligned_pose,
    morphology,
    rasterize,
    refine_masks,
    visibility_masks,
)
from prism_eval.metrics import (
    GaussianStats,
    KernelConfig,
    auc,
    d_prism,
    frechet_distance,
    gaussian_stats,
    mmd_unbiased,
    pearson,
    psnr,
    sqrtm_psd,
    ssim,
)
from prism_eval.pooling import build_raw_feature
from prism_eval.corruptions import CorruptionSpec, corrupt

from conftest import random_unit_rows
from helpers_geometry import (
    cube_mesh,
    icosphere,
    interior_pixels,
    naive_morphology,
    random_soup,
    raycast_face_ids,
    tilted_triangle,
)
from test_corruptions import natural_test_image
from test_metrics import auc_brute_force
from test_pooling import pool_block_reference


@contextmanager
def criterion(name, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        elapsed = time.perf_counter() - start
        print(f"[FAIL] {name} ({elapsed:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_seconds, (
        f"{name}: runtime {elapsed:.2f}s exceeds budget {budget_seconds}s"
    )
    print(f"[PASS] {name} ({elapsed:.2f}s < {budget_seconds}s)")


def test_pooling_oracle():
    with criterion("pooling oracle (100 random stacks, 1e-6 relative)", 5.0):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n_blocks = int(rng.integers(1, 10))
            blocks = []
            for _ in range(n_blocks):
                h = int(rng.integers(1, 33))
                w = int(rng.integers(1, 33))
                c = int(rng.integers(1, 65))
                blocks.append(rng.standard_normal((h, w, c)).astype(np.float32))
            stack = ActivationStack(tuple(blocks))
            got = build_raw_feature(stack).values.astype(np.float64)
            want = np.concatenate([pool_block_reference(b) for b in blocks])
            denom = np.maximum(np.abs(want), 1e-12)
            assert np.max(np.abs(got - want) / denom) <= 1e-6


def _well_conditioned(head, batch, margin, step=1e-3):
    """Keep configs where central differences at the given step are
    trustworthy: no ReLU or hinge kink within perturbation reach, the
    pre-normalization outputs away from zero, and embedding distances away
    from the direction-derivative singularity."""
    members = np.vstack([np.stack([a, p, n]) for a, p, n, _ in batch])
    z1 = members @ head.w1.T + head.b1
    if np.abs(z1).min() < 5.0 * step:
        return False  # a ReLU would switch branch under the fd perturbation
    h = np.maximum(z1, 0.0) @ head.w2.T + head.b2
    norms = np.linalg.norm(h, axis=1)
    if norms.min() < 0.5:
        return False
    f = h / norms[:, None]
    f = f.reshape(len(batch), 3, -1)
    d_ap = np.linalg.norm(f[:, 0] - f[:, 1], axis=1)
    d_an = np.linalg.norm(f[:, 0] - f[:, 2], axis=1)
    if float(min(d_ap.min(), d_an.min())) <= 0.1:
        return False
    expr = d_ap - d_an + margin
    return bool(np.abs(expr).min() > 0.05)  # every hinge clearly on one side


def test_gradient_check():
    with criterion("gradient check (20 configs, 1e-4 relative, fd step 1e-3)", 30.0):
        rng = np.random.default_rng(202)
        checked = 0
        while checked < 20:
            in_dim = int(rng.integers(6, 12))
            hidden = int(rng.integers(6, 12))
            out_dim = int(rng.integers(4, 9))
            head = MlpHead.initialize(in_dim, hidden, out_dim, seed=rng)
            batch = []
            for _ in range(int(rng.integers(1, 4))):
                a, p, n = rng.standard_normal((3, in_dim))
                batch.append(
                    (
                        a / np.linalg.norm(a),
                        p / np.linalg.norm(p),
                        n / np.linalg.norm(n),
                        float(rng.uniform(0.2, 1.0)),
                    )
                )
            margin = float(rng.uniform(0.5, 1.5))
            grads, loss = backward(head, batch, margin)
            if loss <= 0.05 or not _well_conditioned(head, batch, margin):
                continue  # criterion applies to active, well-conditioned configs
            checked += 1
            step = 1e-3
            for name in head_mod.PARAM_NAMES:
                param = getattr(head, name)
                analytic = getattr(grads, name)
                fd = np.zeros_like(param)
                it = np.nditer(param, flags=["multi_index"])
                while not it.finished:
                    idx = it.multi_index
                    orig = param[idx]
                    param[idx] = orig + step
                    up = batch_loss(head, batch, margin)
                    param[idx] = orig - step
                    down = batch_loss(head, batch, margin)
                    param[idx] = orig
                    fd[idx] = (up - down) / (2.0 * step)
                    it.iternext()
                # 1e-4 relative agreement per parameter tensor, plus a small
                # per-entry absolute backstop for localized errors
                diff = np.linalg.norm(analytic - fd)
                assert diff <= 1e-4 * max(np.linalg.norm(fd), 1e-8), (
                    f"{name}: ||analytic - fd|| = {diff}"
                )
                assert np.max(np.abs(analytic - fd)) <= 1e-5


def test_mmd_exactness():
    with criterion("MMD exactness (hand case 1e-9, closed form, N=2000 bound)", 10.0):
        # hand kernel sum
        x = np.array([[0.0], [1.0]])
        value = mmd_unbiased(x, x.copy(), KernelConfig(1.0))
        assert abs(value - (math.exp(-0.5) - 1.0)) <= 1e-9

        # identical sets: 2 * (mean off-diagonal kernel - 1) / m
        rng = np.random.default_rng(303)
        for _ in range(10):
            m = int(rng.integers(5, 40))
            dim = int(rng.integers(2, 8))
            rows = random_unit_rows(rng, m, dim).astype(np.float64)
            sigma = float(rng.uniform(0.5, 2.0))
            got = mmd_unbiased(rows, rows.copy(), KernelConfig(sigma))
            acc = 0.0
            for i in range(m):
                for j in range(m):
                    if i != j:
                        acc += math.exp(
                            -float(np.sum((rows[i] - rows[j]) ** 2)) / (2.0 * sigma**2)
                        )
            a_bar = acc / (m * (m - 1))
            assert abs(got - 2.0 * (a_bar - 1.0) / m) <= 1e-9

        # same seeded distribution at N=2000 stays near zero
        rng = np.random.default_rng(304)
        xs = rng.standard_normal((2000, 1))
        ys = rng.standard_normal((2000, 1))
        from prism_eval.metrics import median_bandwidth

        sigma = median_bandwidth(xs, ys)
        assert abs(mmd_unbiased(xs, ys, KernelConfig(sigma))) <= 0.01


def test_frechet_exactness():
    with criterion("Frechet exactness (identity, 1-D analytics, rotation, sqrtm)", 10.0):
        rng = np.random.default_rng(404)
        stats = gaussian_stats(rng.standard_normal((200, 6)))
        assert frechet_distance(stats, stats) <= 1e-8

        g_a = GaussianStats(np.array([0.0]), np.array([[1.0]]), 10)
        g_b = GaussianStats(np.array([1.0]), np.array([[1.0]]), 10)
        g_c = GaussianStats(np.array([0.0]), np.array([[4.0]]), 10)
        assert abs(frechet_distance(g_a, g_b) - 1.0) <= 1e-9
        assert abs(frechet_distance(g_a, g_c) - 1.0) <= 1e-9

        x = rng.standard_normal((500, 8))
        y = rng.standard_normal((500, 8)) * 1.3 + 0.4
        base = frechet_distance(gaussian_stats(x), gaussian_stats(y))
        for _ in range(5):
            q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
            rot = frechet_distance(gaussian_stats(x @ q), gaussian_stats(y @ q))
            assert abs(base - rot) <= 1e-8 * max(1.0, abs(base))

        for _ in range(10):
            dim = int(rng.integers(2, 65))
            b = rng.standard_normal((dim, dim))
            a = b.T @ b
            s = sqrtm_psd(a)
            residual = np.linalg.norm(s @ s - a) / np.linalg.norm(a)
            assert residual <= 1e-8


def test_d_prism_bounds():
    with criterion("D_PRISM bounds (1e5 pairs in [0,1], exact endpoints)", 5.0):
        rng = np.random.default_rng(505)
        rows_a = random_unit_rows(rng, 100000, 8).astype(np.float64)
        rows_b = random_unit_rows(rng, 100000, 8).astype(np.float64)
        rows_a /= np.linalg.norm(rows_a, axis=1, keepdims=True)
        rows_b /= np.linalg.norm(rows_b, axis=1, keepdims=True)
        values = np.fromiter(
            (d_prism(a, b) for a, b in zip(rows_a, rows_b)), dtype=np.float64
        )
        assert values.size == 100000
        assert (values >= 0.0).all() and (values <= 1.0).all()

        # exact endpoints on exactly-unit-norm vectors (entries +-0.5)
        for _ in range(100):
            f = np.zeros(8)
            f[rng.choice(8, size=4, replace=False)] = rng.choice([-0.5, 0.5], size=4)
            assert float(np.linalg.norm(f)) == 1.0
            assert d_prism(f, f.copy()) == 0.0
            assert d_prism(f, -f) == 1.0


def test_rasterizer_against_raycast_oracle():
    with criterion("rasterizer vs ray-cast oracle (10 meshes, >=99.5% interior)", 60.0):
        rng = np.random.default_rng(606)
        for i in range(10):
            n_faces = int(rng.integers(100, 501))
            mesh = random_soup(rng, n_faces)
            pose = CameraPose(
                float(rng.uniform(0, 360)),
                float(rng.uniform(-50, 60)),
                2.7,
            )
            cam = camera_from_pose(pose, image_size=512)
            buf = rasterize(mesh, cam)
            oracle = raycast_face_ids(mesh, cam)
            interior = interior_pixels(buf.face_id) & interior_pixels(oracle)
            assert interior.sum() > 1000
            agreement = float((buf.face_id[interior] == oracle[interior]).mean())
            assert agreement >= 0.995, f"mesh {i}: agreement {agreement:.5f}"


def test_mask_partition_properties():
    with criterion("mask partition (20 pairs: disjoint, union, epipolar bound)", 60.0):
        rng = np.random.default_rng(707)
        meshes = [
            cube_mesh(),
            icosphere(2),
            tilted_triangle(),
            random_soup(rng, 80),
            random_soup(rng, 150),
        ]
        se20 = StructuringElement.disc(20)
        pairs = 0
        while pairs < 20:
            mesh = meshes[pairs % len(meshes)]
            src_idx = int(rng.integers(16))
            offset = int(rng.integers(1, 16))
            src = camera_from_pose(grid_pose(src_idx), image_size=256)
            tgt = camera_from_pose(grid_pose((src_idx + offset) % 16), image_size=256)
            vis, invis, sil = visibility_masks(mesh, src, tgt)
            assert not (vis.pixels & invis.pixels).any()
            assert ((vis.pixels | invis.pixels) == sil.pixels).all()
            vis_r, invis_r = refine_masks(vis, invis)
            assert not (vis_r.pixels & invis_r.pixels).any()
            epi = epipolar_mask(mesh, src, tgt)
            dilated = morphology(sil, "dilate", se20)
            assert not (epi.pixels & ~dilated.pixels).any()
            pairs += 1


def test_morphology_against_naive_reference():
    with criterion("morphology vs naive reference (50 masks, radii 3/4/10/20)", 10.0):
        rng = np.random.default_rng(808)
        radii = (3, 4, 10, 20)
        elements = {r: StructuringElement.disc(r) for r in radii}
        for i in range(50):
            pixels = rng.random((64, 64)) < float(rng.uniform(0.2, 0.7))
            mask = BinaryMask(pixels)
            radius = radii[i % 4]
            for kind in ("dilate", "erode", "open", "close"):
                got = morphology(mask, kind, elements[radius]).pixels
                want = naive_morphology(pixels, kind, radius)
                assert np.array_equal(got, want), f"{kind} r={radius} mask {i}"


def _synthetic_training_data(rng, n_groups, dim):
    """Anchors with near-duplicates as positives; negatives are either a
    fixed rotation of the anchor (pose-style) or a chunk resample
    (inpaint-style)."""
    from prism_eval.core_io import Manifest, RelativePose, TripletRecord

    rotation, _ = np.linalg.qr(np.random.default_rng(42).standard_normal((dim, dim)))
    records, rows = [], []
    for g in range(n_groups):
        anchor = rng.standard_normal(dim)
        anchor /= np.linalg.norm(anchor)
        pose = RelativePose(d_azimuth_deg=22.5 * float(rng.integers(1, 16)))
        base = f"g{g}"
        records.append(TripletRecord(base, "gt", pose, "ground_truth", 1.0))
        rows.append(anchor + 0.02 * rng.standard_normal(dim))
        for k in range(2):
            records.append(TripletRecord(base, f"p{k}", pose, "positive", 1.0))
            rows.append(anchor + 0.05 * rng.standard_normal(dim))
        rotated = rotation @ anchor
        records.append(
            TripletRecord(base, "n_pose", pose, "negative_pose", float(rng.uniform(0.5, 1.0)))
        )
        rows.append(rotated + 0.05 * rng.standard_normal(dim))
        patched = anchor.copy()
        lo = int(rng.integers(0, dim // 2))
        patched[lo : lo + dim // 2] = rng.standard_normal(dim // 2)
        records.append(
            TripletRecord(base, "n_inp", pose, "negative_inpaint", float(rng.uniform(0.5, 1.0)))
        )
        rows.append(patched)
    manifest = Manifest(records=records)
    return manifest, EmbeddingSet(np.asarray(rows, dtype=np.float32))


def test_end_to_end_synthetic_training():
    with criterion("end-to-end synthetic training (AUC >= 0.95, separation)", 120.0):
        rng = np.random.default_rng(909)
        train_manifest, train_feats = _synthetic_training_data(rng, 60, 24)
        held_manifest, held_feats = _synthetic_training_data(
            np.random.default_rng(910), 20, 24
        )
        cfg = TrainConfig(
            epochs=10,  # default recipe scaled down to 10 epochs
            hidden_dim=64,
            out_dim=32,
            seed=1,
        )
        trained, log = train_head(train_manifest, train_feats, cfg)
        assert len(log) >= 1
        emb = apply_head(trained, held_feats)
        pool, _ = build_triplet_pool(held_manifest, cfg.negative_skip_threshold)
        assert pool
        d_pos = [d_prism(emb.rows[t.anchor], emb.rows[t.positive]) for t in pool]
        d_neg = [d_prism(emb.rows[t.anchor], emb.rows[t.negative]) for t in pool]
        assert np.mean(d_pos) < np.mean(d_neg)
        scores = d_pos + d_neg
        labels = [0] * len(d_pos) + [1] * len(d_neg)  # larger distance = negative
        probe_auc = auc(scores, labels)
        assert probe_auc >= 0.95, f"probe AUC {probe_auc:.4f}"


def test_corruption_monotonicity():
    with criterion("corruption monotonicity (PSNR/SSIM vs severity, 5 images)", 10.0):
        for image_index in range(5):
            img = natural_test_image(image_index, size=64)
            for kind in ("blur", "gaussian_noise", "salt_pepper"):
                psnr_vals, ssim_vals = [], []
                for severity in range(3):
                    out = corrupt(img, CorruptionSpec(kind, severity, seed=17))
                    psnr_vals.append(psnr(img, out))
                    ssim_vals.append(ssim(img, out))
                assert psnr_vals[0] >= psnr_vals[1] >= psnr_vals[2], (kind, psnr_vals)
                assert ssim_vals[0] >= ssim_vals[1] >= ssim_vals[2], (kind, ssim_vals)


def test_statistics_criteria():
    with criterion("statistics (AUC brute force, Pearson 1e-9, pose grid)", 30.0):
        rng = np.random.default_rng(111)
        done = 0
        while done < 100:
            n = int(rng.integers(2, 51))
            scores = rng.choice(np.linspace(0.0, 1.0, 7), size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.all() or not labels.any():
                continue
            assert abs(auc(scores, labels) - auc_brute_force(scores, labels)) <= 1e-12
            done += 1

        x = [1.0, 2.0, 3.0]
        y = [2.0, 4.0, 7.0]
        want = 5.0 / (math.sqrt(2.0) * math.sqrt(38.0 / 3.0))
        assert abs(pearson(x, y) - want) <= 1e-9
        assert abs(pearson(x, x) - 1.0) <= 1e-9
        assert abs(pearson(x, [-v for v in x]) + 1.0) <= 1e-9

        for index in range(16):
            azimuths = set()
            for offset in range(1, 16):
                pose = misaligned_pose(index, offset)
                assert pose.elevation_deg == 30.0
                assert pose.radius == 2.7
                want_az = (22.5 * ((index + offset) % 16)) % 360.0
                assert pose.azimuth_deg == pytest.approx(want_az, abs=1e-12)
                azimuths.add(round(pose.azimuth_deg, 9))
            assert len(azimuths) == 15
            assert round(22.5 * index, 9) not in azimuths
