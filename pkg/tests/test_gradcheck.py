"""Finite-difference oracle: the analytic gradients answer to it."""

import numpy as np
import pytest

from scrnlm.corpus import make_streams
from scrnlm.gradcheck import (DEFAULT_EPSILON, DEFAULT_TOLERANCE,
                              analytic_window_gradients, check_all,
                              compare_gradients, numeric_gradient,
                              relative_errors, window_loss)
from scrnlm.models import create_model
from scrnlm.trainer import TrainConfig, make_schedule, train_epoch

ARCHS = ["srn", "scrn", "scrn-adaptive", "lstm"]


class TestNumericGradient:
    def test_quadratic_loss_recovers_identity(self):
        """Central differences are exact for quadratics up to rounding."""
        rng = np.random.default_rng(0)
        params = {"theta": rng.normal(size=(3, 4))}

        def loss(p):
            return 0.5 * float(np.sum(p["theta"] ** 2))

        grads = numeric_gradient(loss, params, epsilon=1e-4)
        np.testing.assert_allclose(grads["theta"], params["theta"], rtol=1e-9)

    def test_constant_loss_gives_zero(self):
        params = {"theta": np.linspace(-1, 1, 7)}
        grads = numeric_gradient(lambda p: 4.25, params, epsilon=1e-4)
        np.testing.assert_allclose(grads["theta"], 0.0, atol=1e-10)

    def test_parameters_restored_after_perturbation(self):
        rng = np.random.default_rng(1)
        params = {"w": rng.normal(size=5)}
        before = params["w"].copy()
        numeric_gradient(lambda p: float(np.sum(p["w"] ** 3)), params, 1e-4)
        np.testing.assert_array_equal(params["w"], before)

    def test_rejects_low_precision_blocks(self):
        params = {"w": np.zeros(3, dtype=np.float32)}
        with pytest.raises(ValueError):
            numeric_gradient(lambda p: 0.0, params, 1e-4)


class TestRelativeErrors:
    def test_floor_guards_near_zero(self):
        a = np.array([0.0, 1e-12])
        n = np.array([0.0, -1e-12])
        err = relative_errors(a, n)
        assert err[0] == 0.0
        assert err[1] == pytest.approx(2e-12 / 1e-8)

    def test_scale_free_for_large_values(self):
        err = relative_errors(np.array([1000.0]), np.array([1001.0]))
        assert err[0] == pytest.approx(1.0 / 1001.0)


class TestWindowOracle:
    def test_scrn_window_matches_backward(self):
        """20-step window: every block of the analytic gradient agrees
        with central differences (the defining oracle run).  The FD side
        runs on an extended-precision copy so cancellation noise stays
        below the tolerance."""
        from dataclasses import replace
        model = create_model("scrn", 13, 7, 5, seed=11, dtype=np.float64)
        tokens = np.random.default_rng(12).integers(0, 13, size=(2, 20))
        analytic = analytic_window_gradients(model, tokens)
        fd_model = replace(
            model,
            cell={k: v.astype(np.longdouble) for k, v in model.cell.items()},
            out={k: v.astype(np.longdouble) for k, v in model.out.items()})
        numeric = numeric_gradient(
            lambda _: window_loss(fd_model, tokens), fd_model.blocks(),
            DEFAULT_EPSILON)
        report = compare_gradients(analytic, numeric, DEFAULT_TOLERANCE)
        assert report.passed, report.lines()

    @pytest.mark.parametrize("arch", ARCHS)
    def test_full_softmax_architectures_pass(self, arch):
        report = check_all(arch, "full")
        assert report.passed, "\n".join(report.lines())
        assert report.max_rel_error <= DEFAULT_TOLERANCE

    @pytest.mark.parametrize("arch", ARCHS)
    def test_hierarchical_softmax_architectures_pass(self, arch):
        report = check_all(arch, "hsm")
        assert report.passed, "\n".join(report.lines())

    def test_adaptive_check_covers_decay_parameters(self):
        report = check_all("scrn-adaptive", "full")
        assert "beta" in report.blocks
        assert report.blocks["beta"].max_rel_error <= DEFAULT_TOLERANCE

    def test_corrupted_gradient_fails_naming_the_block(self):
        from dataclasses import replace
        model = create_model("scrn", 13, 7, 5, seed=13, dtype=np.float64)
        tokens = np.random.default_rng(14).integers(0, 13, size=(2, 12))
        analytic = analytic_window_gradients(model, tokens)
        analytic["R"] = -analytic["R"]  # sign flip
        fd_model = replace(
            model,
            cell={k: v.astype(np.longdouble) for k, v in model.cell.items()},
            out={k: v.astype(np.longdouble) for k, v in model.out.items()})
        numeric = numeric_gradient(
            lambda _: window_loss(fd_model, tokens), fd_model.blocks(),
            DEFAULT_EPSILON)
        report = compare_gradients(analytic, numeric, DEFAULT_TOLERANCE)
        assert not report.passed
        assert report.failing_blocks() == ["R"]
        assert report.worst_block == "R"

    def test_error_shrinks_with_epsilon(self):
        """O(eps^2) truncation: widening eps from 1e-4 to 1e-3 must not
        make the check more accurate."""
        fine = check_all("scrn", "full", epsilon=1e-4)
        coarse = check_all("scrn", "full", epsilon=1e-3)
        assert fine.max_rel_error < coarse.max_rel_error

    def test_dimension_guard(self):
        with pytest.raises(ValueError):
            check_all("scrn", "full", vocab_size=5000)
        with pytest.raises(ValueError):
            check_all("scrn", "full", window=500)


class TestPrecisionAgreement:
    def test_float32_first_epoch_tracks_float64(self):
        """32-bit mode is validated by agreement with 64-bit on the first
        epoch's mean nll within 0.1%."""
        rng = np.random.default_rng(15)
        ids = rng.integers(0, 30, size=400)
        stats = {}
        for precision in ("float32", "float64"):
            cfg = TrainConfig(arch="scrn", hidden_size=8, context_size=4,
                              num_streams=2, bptt_span=10, update_interval=5,
                              precision=precision)
            model = create_model("scrn", 30, 8, 4, seed=16, dtype=cfg.dtype())
            stats[precision] = train_epoch(model, make_streams(ids, 2), cfg,
                                           make_schedule(cfg)).mean_nll
        assert stats["float32"] == pytest.approx(stats["float64"], rel=1e-3)
