"""Tests for calib_template module."""
import logging

import numpy as np
import pytest

import calib_template
from calib_template import (RigidPair, calibrate_with_template, gamma_from_pair, refine_intrinsics,
                            refinement_energy, select_hypothesis, solve_iac_minimal, template_residual)
from camera import IAC, Intrinsics, upgraded_distance
from errors import RejectedHypothesisError, RejectedPairError
from graph import EdgeLengths, build_neighbor_graph
from reconstruct import SfTProblem, reconstruct_sft
from synth import evaluate, generate_cylinder_bend
from tracks import Reconstruction
from upgrade import upgrade


def _exact_pairs(K, rng, count=5):
    pairs = []
    for n in range(count):
        u_i = np.array([*rng.uniform([0, 0], [640, 480]), 1.0])
        u_j = np.array([*rng.uniform([0, 0], [640, 480]), 1.0])
        a_i, a_j = rng.uniform(1.0, 2.0, 2)
        d = upgraded_distance(K, a_i, a_j, u_i, u_j)
        pairs.append(RigidPair.create(2 * n, 2 * n + 1, u_i, u_j, a_i, a_j, d))
    return pairs


@pytest.fixture(scope="module")
def rigid(camera):
    """Three views of one bent sheet, template = its exact 3D chords."""
    scene, tracks, _ = generate_cylinder_bend(5, 6, 0.05, [0.5, 0.5, 0.5], camera, seed=5)
    X = scene.points[0] - scene.translations[0]
    i, j = np.triu_indices(scene.num_points, 1)
    template = EdgeLengths(np.stack([i, j], axis=1), np.linalg.norm(X[i] - X[j], axis=1))
    return scene, tracks, template, build_neighbor_graph(tracks, k=6)


class TestGamma:
    """Test the inverse squared cosine from ranges and length."""

    def test_collinear(self):
        """Test gamma = 1 for collinear sightlines."""
        assert gamma_from_pair(2.0, 1.0, 1.0) == pytest.approx(1.0)

    def test_sixty_degrees(self):
        """Test gamma = 1 / cos^2 60 = 4."""
        assert gamma_from_pair(1.0, 1.0, 1.0) == pytest.approx(4.0)

    def test_right_angle_rejected(self):
        """Test the vanishing denominator."""
        with pytest.raises(RejectedPairError):
            gamma_from_pair(1.0, 1.0, np.sqrt(2.0))

    def test_pairs_have_gamma_at_least_one(self):
        """Test the angle identity on synthesized pairs."""
        K = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
        assert all(p.gamma >= 1.0 for p in _exact_pairs(K, np.random.default_rng(2), count=20))

    def test_inconsistent_length_rejected(self):
        """Test that a length longer than the ranges allow is refused."""
        u = np.array([320.0, 240.0, 1.0])
        with pytest.raises(RejectedPairError):
            RigidPair.create(0, 1, u, u, 1.0, 1.0, 5.0)


class TestSolveIACMinimal:
    """Test the five-pair IAC solver."""

    def test_recovers_camera(self):
        """Test that pairs synthesized from K give back its IAC."""
        K = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
        truth = IAC.from_intrinsics(K)
        pairs = _exact_pairs(K, np.random.default_rng(5))
        candidates = solve_iac_minimal(pairs, 640, 480, starts=50, rng=np.random.default_rng(0))
        assert any(c.iac.distance(truth) < 1e-6 for c in candidates)
        assert all(c.residual <= 1e-8 for c in candidates)

    def test_forward_residual_at_ground_truth(self):
        """Test that the pair equations hold at the true IAC."""
        K = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
        W = IAC.from_intrinsics(K).omega
        for p in _exact_pairs(K, np.random.default_rng(6)):
            lhs = (p.u_i @ W @ p.u_i) * (p.u_j @ W @ p.u_j)
            rhs = p.gamma * (p.u_i @ W @ p.u_j) ** 2
            assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_wrong_pair_count(self):
        """Test that exactly five pairs are needed."""
        K = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
        with pytest.raises(RejectedHypothesisError):
            solve_iac_minimal(_exact_pairs(K, np.random.default_rng(0), count=4))

    def test_degenerate_pairs(self):
        """Test five copies of one sightline pair give no confident candidate."""
        K = Intrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
        pair = _exact_pairs(K, np.random.default_rng(1), count=1)[0]
        candidates = solve_iac_minimal([pair] * 5, 640, 480, starts=10)
        assert candidates == []


class TestTemplateResidual:
    """Test the template residual and the refinement energy."""

    def test_zero_at_ground_truth(self, rigid):
        """Test that the exact reconstruction matches the template."""
        scene, tracks, template, graph = rigid
        recon = scene.reconstruction(tracks)
        residual = template_residual(scene.intrinsics, recon, template, graph)
        assert residual < 1e-10 * len(graph.edges())

    def test_scaled_reconstruction(self, rigid):
        """Test that doubling every distance gives the sum of squared lengths."""
        scene, tracks, template, graph = rigid
        recon = scene.reconstruction(tracks)
        doubled = Reconstruction(tracks, recon.depths.scaled(2.0))
        lengths = template.restricted_to(graph).lengths
        expected = 2.0 * tracks.num_views * float(np.sum(lengths ** 2))
        residual = template_residual(scene.intrinsics, doubled, template, graph)
        assert residual == pytest.approx(expected, rel=1e-6)

    def test_wrong_focal_is_worse(self, rigid):
        """Test that the residual grows away from the true camera."""
        scene, tracks, template, graph = rigid
        recon = scene.reconstruction(tracks)
        K = scene.intrinsics
        at_truth = template_residual(K, recon, template, graph)
        assert template_residual(K.with_focal(650.0), recon, template, graph) > at_truth

    def test_energy_regularizer(self, rigid):
        """Test that the regularizer vanishes for a centered square-pixel camera."""
        scene, tracks, template, graph = rigid
        recon = scene.reconstruction(tracks)
        assert refinement_energy(scene.intrinsics, recon, template, graph) < 1e-10
        shifted = Intrinsics(fx=500.0, fy=500.0, cx=350.0, cy=240.0)
        assert refinement_energy(shifted, recon, template, graph) > 1e-3


class TestRefineIntrinsics:
    """Test the local refinement of all five intrinsics."""

    def test_stationary_at_ground_truth(self, rigid):
        """Test that the true camera is kept."""
        scene, tracks, template, graph = rigid
        K = scene.intrinsics
        refined = refine_intrinsics(K, scene.reconstruction(tracks), template, graph)
        np.testing.assert_allclose(refined.matrix, K.matrix, rtol=1e-3, atol=0.5)

    def test_principal_point_offset(self, rigid):
        """Test that an offset principal point is pulled back."""
        scene, tracks, template, graph = rigid
        K = scene.intrinsics
        start = Intrinsics(fx=500.0, fy=500.0, cx=350.0, cy=240.0)
        refined = refine_intrinsics(start, scene.reconstruction(tracks), template, graph)
        assert np.hypot(refined.cx - K.cx, refined.cy - K.cy) <= 0.2 * 30.0

    def test_energy_never_increases(self, rigid):
        """Test the energy trace over accepted iterates."""
        scene, tracks, template, graph = rigid
        start = Intrinsics(fx=430.0, fy=560.0, skew=4.0, cx=290.0, cy=260.0)
        trace = []
        refine_intrinsics(start, scene.reconstruction(tracks), template, graph, trace=trace)
        assert len(trace) >= 2
        assert all(b <= a * (1.0 + 1e-12) for a, b in zip(trace, trace[1:]))

    def test_noisy_starts(self, rigid):
        """Test 100 starts with 20% noise: lower focal and principal point errors, 3D error kept within 2%."""
        scene, tracks, template, graph = rigid
        K = scene.intrinsics
        recon = scene.reconstruction(tracks)
        rng = np.random.default_rng(9)
        before, after = [], []
        for _ in range(100):
            noise = rng.uniform(0.8, 1.2, 5)
            start = Intrinsics(fx=K.fx * noise[0], fy=K.fy * noise[1], skew=K.skew * noise[2],
                               cx=K.cx * noise[3], cy=K.cy * noise[4], width=K.width, height=K.height)
            start_recon = Reconstruction(tracks, upgrade(recon.depths, tracks, start))
            refined = refine_intrinsics(start, start_recon, template, graph)
            refined_recon = Reconstruction(tracks, upgrade(start_recon.depths, tracks, refined))
            for K_est, est, errors in ((start, start_recon, before), (refined, refined_recon, after)):
                errors.append((abs(K_est.focal - K.focal), np.hypot(K_est.cx - K.cx, K_est.cy - K.cy),
                               evaluate(est, scene, "globalScale").relative_error))
        before, after = np.mean(before, axis=0), np.mean(after, axis=0)
        assert after[0] < before[0]
        assert after[1] < before[1]
        assert after[2] <= 1.02 * before[2]


class TestSelectHypothesis:
    """Test hypothesis validation by the template residual."""

    def test_true_camera_wins(self, rigid):
        """Test that the true camera beats perturbed hypotheses."""
        scene, tracks, template, graph = rigid
        K = scene.intrinsics
        rng = np.random.default_rng(3)
        hypotheses = [K.with_focal(K.focal * s) for s in rng.uniform(0.6, 1.6, 10)] + [K]
        best, scored = select_hypothesis(hypotheses, scene.reconstruction(tracks), template, graph)
        assert best.intrinsics == K
        assert len(scored) == len(hypotheses)

    def test_empty(self, rigid):
        """Test no hypotheses."""
        scene, tracks, template, graph = rigid
        best, scored = select_hypothesis([], scene.reconstruction(tracks), template, graph)
        assert best is None and scored == []


class TestCalibrateWithTemplate:
    """Test the outer calibration loop."""

    def test_report(self, cylinder, cylinder_graph):
        """Test the per-iteration report and the final reconstruction."""
        scene, tracks, template = cylinder
        result = calibrate_with_template(tracks, cylinder_graph, template, scene.intrinsics,
                                         hypotheses=10, starts=5, max_outer=2)
        assert 1 <= len(result.iterations) <= 2
        first = result.iterations[0]
        assert {"guess", "hypotheses", "chosen", "refined", "energy_trace", "focal_change"} <= set(first)
        assert result.reconstruction.intrinsics == result.intrinsics
        assert result.to_dict()["intrinsics"]["fx"] == result.intrinsics.fx

    def test_fallback_when_every_hypothesis_rejected(self, cylinder, cylinder_graph, monkeypatch, caplog):
        """Test that the current guess is refined directly, with a warning."""
        scene, tracks, template = cylinder
        monkeypatch.setattr(calib_template, "generate_hypotheses", lambda *args, **kwargs: [])
        with caplog.at_level(logging.WARNING, logger="calib_template"):
            result = calibrate_with_template(tracks, cylinder_graph, template, scene.intrinsics, max_outer=1)
        assert "every hypothesis was rejected" in caplog.text
        assert result.iterations[0]["chosen"] is None


@pytest.mark.slow
class TestCalibrationAccuracy:
    """Test focal recovery on a single wide view."""

    @pytest.fixture(scope="class")
    def view(self):
        K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
        return generate_cylinder_bend(10, 15, 0.05, [0.4], K, seed=0)

    def test_noiseless(self, view):
        """Test focal error below 5% from the default guess."""
        scene, tracks, template = view
        graph = build_neighbor_graph(tracks)
        K_hat = Intrinsics.default_guess(640, 480)
        result = calibrate_with_template(tracks, graph, template, K_hat)
        report = evaluate(result.reconstruction, scene)
        assert report.focal_error_pct < 5.0
        assert report.pp_error < 0.02

    def test_noisy(self, camera):
        """Test focal error below 15% with half-pixel track noise."""
        scene, tracks, template = generate_cylinder_bend(10, 15, 0.05, [0.4], camera, noise=0.5, seed=0)
        graph = build_neighbor_graph(tracks)
        result = calibrate_with_template(tracks, graph, template, Intrinsics.default_guess(640, 480))
        assert evaluate(result.reconstruction, scene).focal_error_pct < 15.0

    def test_sft_under_calibrated_camera(self, view):
        """Test that the calibrated reconstruction is close to the truth."""
        scene, tracks, template = view
        graph = build_neighbor_graph(tracks)
        result = calibrate_with_template(tracks, graph, template, Intrinsics.default_guess(640, 480))
        direct = reconstruct_sft(SfTProblem(tracks, graph, template, result.intrinsics))
        np.testing.assert_allclose(direct.depth, result.reconstruction.depths.depth, rtol=1e-3)
