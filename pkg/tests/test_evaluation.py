import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from poselift.evaluation import (
    EvalProtocol,
    Protocol,
    batch_mpjpe,
    evaluate,
    mpjpe,
    oracle_best_exemplar,
    procrustes_align,
    upper_bound_gt_depth,
)
from poselift.exceptions import DegenerateConfiguration, NonPositiveDepth
from poselift.geometry import CameraModel, Pose2D, Pose3D, project, rodrigues
from poselift.matcher import MatchConfig
from poselift.skeleton import default_skeleton
from poselift.warp import lift

from conftest import random_rotation
from oracles import numeric_alignment_residual

P1 = EvalProtocol(Protocol.P1_RIGID)
P2 = EvalProtocol(Protocol.P2_ROOT_CENTERED)
PS = EvalProtocol(Protocol.RIGID_PLUS_SCALE)
ALL = [P1, P2, PS]


def body(rng, skeleton):
    return Pose3D(rng.normal(scale=300, size=(17, 3)) + [0, 0, 5000], skeleton)


def test_exact_rigid_match_recovered(rng, skeleton):
    for _ in range(20):
        src = body(rng, skeleton)
        R0, t0 = random_rotation(rng), rng.normal(scale=500, size=3)
        tgt = Pose3D(src.joints @ R0.T + t0, skeleton)
        al = procrustes_align(src, tgt)
        np.testing.assert_allclose(al.rotation, R0, atol=1e-9)
        np.testing.assert_allclose(al.translation, t0, atol=1e-9 * 5000)
        assert al.scale == 1.0
        assert al.residual < 1e-12 * np.sum(tgt.joints**2)
        assert np.linalg.det(al.rotation) == pytest.approx(1.0, abs=1e-12)


def test_scale_recovery(rng, skeleton):
    src = body(rng, skeleton)
    tgt = Pose3D(2.5 * src.joints, skeleton)
    al = procrustes_align(src, tgt, with_scale=True)
    assert al.scale == pytest.approx(2.5, rel=1e-12)
    assert al.residual == pytest.approx(0.0, abs=1e-12 * np.sum(tgt.joints**2))
    assert procrustes_align(src, tgt, with_scale=False).residual > 1.0


def test_reflection_is_never_returned(rng, skeleton):
    src = body(rng, skeleton)
    mirrored = Pose3D(src.joints * [-1, 1, 1], skeleton)
    al = procrustes_align(src, mirrored)
    assert np.linalg.det(al.rotation) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_configurations(skeleton):
    line = np.outer(np.arange(17.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfiguration):
        procrustes_align(Pose3D(line, skeleton), Pose3D(line + 1, skeleton))
    point = np.ones((17, 3))
    with pytest.raises(DegenerateConfiguration):
        procrustes_align(Pose3D(point, skeleton), Pose3D(point, skeleton))


@pytest.mark.parametrize("with_scale", [False, True])
def test_closed_form_matches_numeric_minimizer(rng, skeleton, with_scale):
    for _ in range(5):
        A = rng.normal(scale=300, size=(17, 3))
        B = A @ random_rotation(rng).T + rng.normal(scale=60, size=(17, 3)) + [10, 20, 30]
        al = procrustes_align(Pose3D(A, skeleton), Pose3D(B, skeleton), with_scale)
        num = numeric_alignment_residual(A, B, with_scale, rng)
        assert num >= al.residual * (1 - 1e-9)
        assert abs(num - al.residual) / al.residual < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_residual_invariant_to_source_prerotation(seed):
    rng = np.random.default_rng(seed)
    sk = default_skeleton()
    A = rng.normal(scale=300, size=(17, 3))
    B = rng.normal(scale=300, size=(17, 3))
    Q = random_rotation(rng)
    r1 = procrustes_align(Pose3D(A, sk), Pose3D(B, sk)).residual
    r2 = procrustes_align(Pose3D(A @ Q.T, sk), Pose3D(B, sk)).residual
    assert r2 == pytest.approx(r1, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_free_scale_never_worse(seed):
    rng = np.random.default_rng(seed)
    sk = default_skeleton()
    A, B = Pose3D(rng.normal(scale=300, size=(17, 3)), sk), Pose3D(rng.normal(scale=300, size=(17, 3)), sk)
    assert procrustes_align(A, B, True).residual <= procrustes_align(A, B, False).residual * (1 + 1e-12)


def test_mpjpe_identity_offset_rotation(rng, skeleton):
    gt = body(rng, skeleton)
    for p in ALL:
        assert mpjpe(gt, gt, p) == pytest.approx(0.0, abs=1e-9)
    shifted = Pose3D(gt.joints + [50.0, 0.0, 0.0], skeleton)
    assert mpjpe(shifted, gt, P2) == pytest.approx(0.0, abs=1e-9)
    assert mpjpe(shifted, gt, P1) == pytest.approx(0.0, abs=1e-9)
    c = gt.joints.mean(axis=0)
    turned = Pose3D((gt.joints - c) @ rodrigues([0, np.pi / 2, 0]).T + c, skeleton)
    assert mpjpe(turned, gt, P1) == pytest.approx(0.0, abs=1e-9)
    assert mpjpe(turned, gt, P2) > 10.0


def test_p2_symmetric_and_root_flag(rng, skeleton):
    a, b = body(rng, skeleton), body(rng, skeleton)
    assert mpjpe(a, b, P2) == pytest.approx(mpjpe(b, a, P2), rel=1e-12)
    incl = mpjpe(a, b, P2)
    excl = mpjpe(a, b, EvalProtocol(Protocol.P2_ROOT_CENTERED, 0, include_root_in_mpjpe=False))
    assert excl == pytest.approx(incl * 17 / 16, rel=1e-12)


def test_batch_mpjpe_matches_single(rng, skeleton):
    gt = body(rng, skeleton)
    preds = np.stack([body(rng, skeleton).joints for _ in range(30)])
    for p in ALL:
        batch = batch_mpjpe(preds, gt.joints, p)
        single = [mpjpe(Pose3D(x, skeleton), gt, p) for x in preds]
        np.testing.assert_allclose(batch, single, rtol=1e-9)


def offset_pose(gt, mm):
    joints = gt.joints.copy()
    joints[1:] += [mm, 0.0, 0.0]
    return Pose3D(joints, gt.skeleton)


def test_evaluate_single_perfect_query(rng, skeleton):
    gt = body(rng, skeleton)
    rep = evaluate(lambda q: gt, [(Pose2D(np.zeros((17, 2)), skeleton), gt, "walk")], P1)
    assert rep.count == 1
    assert rep.overall_mean == pytest.approx(0.0, abs=1e-9)
    assert rep.overall_median == pytest.approx(0.0, abs=1e-9)
    assert rep.per_activity_mean["walk"] == pytest.approx(0.0, abs=1e-9)
    assert max(rep.per_joint_mean) < 1e-9


def test_evaluate_mean_and_median(rng, skeleton):
    proto = EvalProtocol(Protocol.P2_ROOT_CENTERED, 0, include_root_in_mpjpe=False)
    gts = [body(rng, skeleton), body(rng, skeleton)]
    preds = [offset_pose(gts[0], 10.0), offset_pose(gts[1], 30.0)]
    q = Pose2D(np.zeros((17, 2)), skeleton)
    rep = evaluate(lambda q, i: preds[i], [(q, gts[0], "a"), (q, gts[1], "b")], proto)
    assert rep.overall_mean == pytest.approx(20.0, rel=1e-12)
    assert rep.overall_median == pytest.approx(20.0, rel=1e-12)
    assert rep.per_query == pytest.approx([10.0, 30.0], rel=1e-12)


def test_evaluate_records_failures(rng, skeleton):
    gt = body(rng, skeleton)
    q = Pose2D(np.zeros((17, 2)), skeleton)

    def flaky(q, i):
        if i == 1:
            raise DegenerateConfiguration("boom")
        return gt

    rep = evaluate(flaky, [(q, gt, "a"), (q, gt, "a"), (q, gt, "b")], P1)
    assert rep.count == 2
    assert len(rep.failures) == 1 and rep.failures[0][0] == 1
    assert rep.to_dict()["failure_count"] == 1


def test_report_internal_consistency_and_flat_file_oracle(tmp_path, small_synth):
    lib, queries = small_synth
    results = [lift(lib, q, MatchConfig(k=5)) for q, _, _ in queries]
    for proto in ALL:
        rep = evaluate(lambda q, i: results[i].prediction, queries, proto)
        weighted = sum(rep.per_activity_mean[a] * rep.per_activity_count[a] for a in rep.per_activity_mean)
        assert weighted / rep.count == pytest.approx(rep.overall_mean, rel=1e-12)
    # dump predictions to a flat file, recompute independently
    path = tmp_path / "flat.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for (q, gt, act), r in zip(queries, results):
            w.writerow([act] + list(r.prediction.joints.ravel()) + list(gt.joints.ravel()))
    per_q, per_act = [], {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            vals = np.array([float(v) for v in row[1:]])
            pred, gt = vals[:51].reshape(17, 3), vals[51:].reshape(17, 3)
            pc, gc = pred - pred.mean(axis=0), gt - gt.mean(axis=0)
            rot, _ = Rotation.align_vectors(gc, pc)
            aligned = rot.apply(pc) + gt.mean(axis=0)
            e = float(np.mean(np.sqrt(np.sum((aligned - gt) ** 2, axis=1))))
            per_q.append(e)
            per_act.setdefault(row[0], []).append(e)
    rep = evaluate(lambda q, i: results[i].prediction, queries, P1)
    assert rep.overall_mean == pytest.approx(np.mean(per_q), rel=1e-9)
    assert rep.overall_median == pytest.approx(np.median(per_q), rel=1e-9)
    for a, v in per_act.items():
        assert rep.per_activity_mean[a] == pytest.approx(np.mean(v), rel=1e-9)


def test_report_serialisation(small_synth):
    lib, queries = small_synth
    rep = evaluate(lambda q: lift(lib, q, MatchConfig(k=3), use_refine=False).prediction, queries[:10], P1,
                   label="xstar")
    assert rep.to_json() == rep.to_json()
    d = json.loads(rep.to_json())
    assert d["count"] == 10 and d["protocol"] == "p1"
    lines = rep.to_csv().splitlines()
    header = lines[0].split(",")
    assert header[0] == "method" and header[-2:] == ["Avg.", "Median"]
    assert lines[1].startswith("xstar,")


def test_upper_bound_constant_depth_is_exact(rng, skeleton):
    cam = CameraModel(1150.0, (500.0, 500.0))
    gt = Pose3D(np.column_stack([rng.normal(scale=300, size=(17, 2)), np.full(17, 5000.0)]), skeleton)
    out = upper_bound_gt_depth(project(gt, cam), gt, cam)
    np.testing.assert_allclose(out.joints, gt.joints, rtol=0, atol=1e-9)


def test_upper_bound_weak_perspective_gap(rng, skeleton):
    cam = CameraModel(1150.0, (500.0, 500.0))
    for _ in range(20):
        depth_range = 100.0
        z = 5000.0 + rng.uniform(-depth_range / 2, depth_range / 2, size=17)
        gt = Pose3D(np.column_stack([rng.normal(scale=400, size=(17, 2)), z]), skeleton)
        out = upper_bound_gt_depth(project(gt, cam), gt, cam)
        diameter = max(np.linalg.norm(a - b) for a in gt.joints for b in gt.joints)
        assert np.linalg.norm(out.joints - gt.joints, axis=1).max() < 0.01 * diameter


def test_upper_bound_beats_pipeline_on_noisy_queries(small_synth):
    lib, queries = small_synth
    cam = lib.camera(0)
    ub = evaluate(lambda q, i: upper_bound_gt_depth(q, queries[i][1], cam), queries, P1).overall_mean
    full = evaluate(lambda q: lift(lib, q, MatchConfig(k=10)).prediction, queries, P1).overall_mean
    assert ub < full


def test_upper_bound_rejects_bad_depth(skeleton):
    gt = Pose3D(np.zeros((17, 3)), skeleton)
    with pytest.raises(NonPositiveDepth):
        upper_bound_gt_depth(Pose2D(np.zeros((17, 2)), skeleton), gt, CameraModel(1000.0))


def test_oracle_exemplar_exact_and_rotated(small_synth):
    lib, _ = small_synth
    gt = Pose3D(lib.poses[42], lib.skeleton)
    assert oracle_best_exemplar(lib, gt) == 42
    c = gt.joints.mean(axis=0)
    turned = Pose3D((gt.joints - c) @ rodrigues([0.3, 1.2, -0.4]).T + c + 100, lib.skeleton)
    assert oracle_best_exemplar(lib, turned) == 42
    assert mpjpe(Pose3D(lib.poses[42], lib.skeleton), turned, P1) == pytest.approx(0.0, abs=1e-9)


def test_oracle_exemplar_agrees_with_naive_scan(small_synth):
    lib, queries = small_synth
    sub = lib.take(np.arange(1000))
    for _, gt, _ in queries[:3]:
        errs = [mpjpe(Pose3D(sub.poses[i], sub.skeleton), gt, P1) for i in range(len(sub))]
        best = min(range(len(sub)), key=lambda i: (errs[i], i))
        assert oracle_best_exemplar(sub, gt) == best
