import json
import warnings

import numpy as np
import pytest

from stembed import io
from stembed import synthetic_scenes as ss
from stembed.embedding_loss import InstancePartition, LossConfig, instance_loss_terms
from stembed.geometry import CameraModel, PoseSE3, synthesize_view
from stembed.pipeline import oracle_tracking

CFG = LossConfig()


def test_static_rectangle():
    spec = ss.SceneSpec(height=20, width=30, frames=3,
                        objects=[ss.SceneObject(4, "rect", (6, 8), 5.0, (10, 15))])
    seq = ss.render_sequence(spec)
    expected = np.zeros((20, 30), dtype=int)
    expected[7:14, 11:20] = 4
    for t in range(3):
        np.testing.assert_array_equal(seq.labels[t], expected)
        np.testing.assert_array_equal(seq.detections[t], expected > 0)
    np.testing.assert_array_equal(seq.rgb[0], seq.rgb[2])
    assert (seq.depth[0][expected > 0] == 5.0).all()


def test_crossing_objects_painter_oracle():
    objs = [ss.SceneObject(1, "rect", (8, 8), 10.0, (10, 5), (0, 3)),
            ss.SceneObject(2, "disc", (5,), 20.0, (10, 25), (0, -2))]
    spec = ss.SceneSpec(height=20, width=30, frames=6, objects=objs)
    seq = ss.render_sequence(spec)
    rows, cols = np.mgrid[0:20, 0:30]
    for t in range(6):
        expected = np.zeros((20, 30), dtype=int)
        for r in range(20):
            for c in range(30):
                best = None
                for o in objs:
                    cr = o.position[0] + t * o.velocity[0]
                    cc = o.position[1] + t * o.velocity[1]
                    if o.shape == "rect":
                        inside = abs(r - cr) <= o.size[0] / 2 and abs(c - cc) <= o.size[1] / 2
                    else:
                        inside = (r - cr) ** 2 + (c - cc) ** 2 <= o.size[0] ** 2
                    if inside and (best is None or o.depth < best.depth):
                        best = o
                expected[r, c] = 0 if best is None else best.id
        np.testing.assert_array_equal(seq.labels[t], expected)


def test_empty_scene():
    seq = ss.render_sequence(ss.SceneSpec(height=8, width=8, frames=2))
    assert not seq.labels.any() and not seq.detections.any()
    assert (seq.depth == ss.BACKGROUND_DEPTH).all()


def test_dropout_blanks_detection_only():
    spec = ss.SceneSpec(height=16, width=16, frames=2, dropout=[(1, 3)],
                        objects=[ss.SceneObject(3, "rect", (4, 4), 5.0, (8, 8))])
    seq = ss.render_sequence(spec)
    assert seq.detections[0].any() and not seq.detections[1].any()
    assert (seq.labels[1] == 3).any()


def test_rendering_is_deterministic():
    spec = ss.occlusion_scenarios()["partial"]
    a, b = ss.render_sequence(spec), ss.render_sequence(spec)
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_never_visible_warns():
    spec = ss.SceneSpec(height=10, width=10, frames=2,
                        objects=[ss.SceneObject(1, "rect", (2, 2), 5.0, (100, 100))])
    with pytest.warns(UserWarning, match="never visible"):
        ss.render_sequence(spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        ss.SceneSpec(objects=[ss.SceneObject(1), ss.SceneObject(1, depth=3.0)])
    with pytest.raises(ValueError):
        ss.SceneSpec(objects=[ss.SceneObject(1), ss.SceneObject(2)])
    with pytest.raises(ValueError):
        ss.SceneSpec(frames=2, camera_poses=[PoseSE3(), PoseSE3(rotation=(0.1, 0, 0))])
    with pytest.raises(ValueError):
        ss.SceneObject(1, shape="star")


def test_camera_parallax_moves_near_objects_more():
    poses = [PoseSE3(translation=(0.0, 0, 0)), PoseSE3(translation=(0.2, 0, 0))]
    spec = ss.SceneSpec(height=20, width=40, frames=2, camera_poses=poses,
                        objects=[ss.SceneObject(1, "rect", (4, 4), 4.0, (10, 20))])
    seq = ss.render_sequence(spec)
    c0 = np.argwhere(seq.labels[0] == 1)[:, 1].mean()
    c1 = np.argwhere(seq.labels[1] == 1)[:, 1].mean()
    assert c1 - c0 == pytest.approx(-spec.camera.fx * 0.2 / 4.0, abs=0.5)


def test_spec_dict_round_trip():
    spec = ss.occlusion_scenarios()["missed_detection"]
    back = ss.SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back.to_dict() == spec.to_dict()


def test_write_sequence(tmp_path):
    spec = ss.SceneSpec(height=12, width=14, frames=2,
                        objects=[ss.SceneObject(2, "disc", (3,), 5.0, (6, 7))])
    seq = ss.render_sequence(spec)
    ospec = ss.OracleEmbeddingSpec(ss.separated_means([2], 4, CFG.rho_r))
    emb = ss.oracle_embeddings(seq.labels, ospec)
    ss.write_sequence(tmp_path, spec, seq, emb, ospec)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert ss.SceneSpec.from_dict(manifest["scene"]).to_dict() == spec.to_dict()
    assert ss.OracleEmbeddingSpec.from_dict(manifest["embedding"]).to_dict() == ospec.to_dict()
    np.testing.assert_array_equal(io.read_id_map(tmp_path / "labels" / "000001.pgm"), seq.labels[1])
    np.testing.assert_array_equal(io.read_pfm(tmp_path / "depth" / "000000.pfm"), seq.depth[0])
    np.testing.assert_allclose(io.read_tensor(tmp_path / "embeddings" / "000001.ste"), emb[:, 1],
                               rtol=1e-6)
    assert (io.read_pgm(tmp_path / "masks" / "000000.pgm") > 0).sum() == seq.detections[0].sum()


# -- oracle embeddings ----------------------------------------------------------------

def test_separated_means():
    means = ss.separated_means(range(6), 3, CFG.rho_r)
    spec = ss.OracleEmbeddingSpec(means)
    assert spec.min_separation() == pytest.approx(1.2 * 2 * CFG.rho_r)
    with pytest.raises(ValueError):
        ss.separated_means(range(7), 3, CFG.rho_r)


def test_zero_noise_embeddings_have_zero_loss():
    seq = ss.render_sequence(ss.occlusion_scenarios()["partial"])
    ids = sorted(set(np.unique(seq.labels)) - {0})
    ospec = ss.OracleEmbeddingSpec(ss.separated_means(ids, 8, CFG.rho_r))
    emb = ss.oracle_embeddings(seq.labels, ospec)
    terms = instance_loss_terms(emb, InstancePartition.from_labels(seq.labels), CFG)
    assert terms["attraction"] == 0.0 and terms["repulsion"] == 0.0


def test_missing_mean_rejected():
    with pytest.raises(ValueError):
        ss.oracle_embeddings(np.array([[0, 5]]), ss.OracleEmbeddingSpec({1: np.zeros(2)}))


def test_drift_is_linear_in_time():
    labels = np.ones((3, 2, 2), dtype=int)
    ospec = ss.OracleEmbeddingSpec({1: np.zeros(2)}, drift=(0.5, 0.0))
    emb = ss.oracle_embeddings(labels, ospec)
    np.testing.assert_allclose(emb[0, :, 0, 0], [0.0, 0.5, 1.0])


# -- end to end ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["partial", "missed_detection", "total_occlusion"])
def test_noisy_pipeline_pixel_agreement(name):
    spec = ss.occlusion_scenarios()[name]
    run = oracle_tracking(spec, CFG, sigma_frac=0.1, drift_frac=0.0, seed=1)
    det = ss.render_sequence(spec).detections
    fg = run.labels > 0
    # every detected pixel lands in a track that maps one-to-one onto ground truth
    pairs = set(zip(run.labels[det].tolist(), run.predicted[det].tolist()))
    assert len(pairs) == len({p for _, p in pairs}) == len({g for g, _ in pairs})
    assert (run.predicted[~det] == 0).all() and (run.predicted[det & fg] > 0).mean() > 0.99


def test_slow_drift_has_no_switches():
    spec = ss.SceneSpec(frames=5, objects=[ss.SceneObject(1, "rect", (10, 10), 5.0, (20, 20), (0, 2)),
                                           ss.SceneObject(2, "disc", (6,), 9.0, (40, 70), (0, -2))])
    for seed in range(3):
        run = oracle_tracking(spec, CFG, drift_frac=0.2, seed=seed)
        assert run.report.ids == 0


# -- geometry fixture ------------------------------------------------------------------

CAM = CameraModel(96.0, 96.0, 47.5, 31.5)


def test_plane_fixture_zero_baseline():
    I_t, I_s, pose, depth = ss.plane_fixture(CAM, 6.0, (0, 0, 0))
    np.testing.assert_array_equal(I_t, I_s)
    assert pose.translation == (0.0, 0.0, 0.0)
    assert (depth.values == 6.0).all()


def test_plane_fixture_disparity():
    b, d = 0.25, 6.0
    I_t, I_s, _, _ = ss.plane_fixture(CAM, d, (b, 0, 0))
    shift = CAM.fx * b / d
    assert shift == pytest.approx(4.0)
    np.testing.assert_allclose(I_s[:, 24:64], I_t[:, 20:60], atol=1e-12)


def test_plane_fixture_pose_reconstructs():
    I_t, I_s, pose, depth = ss.plane_fixture(CAM, 6.0, (0.1, -0.05, 0.2))
    out, valid = synthesize_view(I_s, depth, pose, CAM)
    assert np.abs(out - I_t)[valid].mean() < 1e-3


def test_plane_fixture_rejects_bad_geometry():
    with pytest.raises(ValueError):
        ss.plane_fixture(CAM, -1.0, (0, 0, 0))
    with pytest.raises(ValueError):
        ss.plane_fixture(CAM, 2.0, (0, 0, -3))


def test_no_warnings_for_built_in_scenarios():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for spec in ss.occlusion_scenarios().values():
            ss.render_sequence(spec)
