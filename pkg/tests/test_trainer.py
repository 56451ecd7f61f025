"""Training loop: clipping, schedule, SGD semantics, BPTT correctness."""

import math
import os

import numpy as np
import pytest

from scrnlm import trainer
from scrnlm.checkpoint import (CheckpointTruncatedError, VocabHashMismatchError,
                               load_checkpoint, save_checkpoint)
from scrnlm.corpus import make_streams
from scrnlm.evaluator import perplexity
from scrnlm.models import create_model
from scrnlm.numerics import sigmoid
from scrnlm.trainer import (EpochStats, ScheduleState, TrainConfig,
                            TrainDivergence, make_schedule,
                            renormalize_gradients, schedule_step, sgd_apply,
                            train_epoch)


def small_config(**kw):
    base = dict(arch="scrn", hidden_size=6, context_size=3, num_streams=2,
                bptt_span=8, update_interval=4, learning_rate=0.05,
                clip_norm=5.0, max_epochs=20, precision="float64")
    base.update(kw)
    return TrainConfig(**base)


class TestRenormalize:
    def test_norm_ten_clipped_to_exactly_five(self):
        g = {"a": np.array([6.0, 8.0])}  # norm 10
        pre = renormalize_gradients(g, 5.0)
        assert pre == pytest.approx(10.0, rel=1e-15)
        np.testing.assert_allclose(np.linalg.norm(g["a"]), 5.0, rtol=1e-12)

    def test_small_norm_untouched(self):
        g = {"a": np.array([0.0, 3.0])}
        pre = renormalize_gradients(g, 5.0)
        assert pre == pytest.approx(3.0)
        np.testing.assert_array_equal(g["a"], [0.0, 3.0])

    def test_direction_preserved(self):
        rng = np.random.default_rng(0)
        g = {"a": rng.normal(size=(4, 5)) * 10, "b": rng.normal(size=7) * 10}
        before = np.concatenate([g["a"].ravel(), g["b"].ravel()]).copy()
        pre = renormalize_gradients(g, 1.0)
        after = np.concatenate([g["a"].ravel(), g["b"].ravel()])
        np.testing.assert_allclose(after, before / pre, rtol=1e-12)

    def test_none_and_inf_disable(self):
        for limit in (None, math.inf):
            g = {"a": np.full(4, 100.0)}
            pre = renormalize_gradients(g, limit)
            assert pre == pytest.approx(200.0)
            np.testing.assert_array_equal(g["a"], 100.0)

    def test_norm_spans_blocks(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert renormalize_gradients(g, None) == pytest.approx(5.0)


class TestSchedule:
    def config(self):
        return small_config(learning_rate=0.05, lr_decay_divisor=1.5, max_epochs=50)

    def test_improvement_keeps_rate(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, stop = schedule_step(sched, 120.0, cfg)
        assert sched.best_ppl == 120.0 and not stop
        sched, stop = schedule_step(sched, 119.0, cfg)  # 119 < 120 * 0.999
        assert sched.best_ppl == 119.0
        assert sched.current_lr == 0.05
        assert not sched.decay_started and not stop

    def test_non_improvement_divides_rate(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, _ = schedule_step(sched, 119.0, cfg)
        sched, stop = schedule_step(sched, 119.5, cfg)
        assert sched.current_lr == pytest.approx(0.05 / 1.5, rel=1e-15)
        assert sched.decay_started and not stop
        assert sched.best_ppl == 119.0  # best only moves on improvement

    def test_sub_threshold_gain_counts_as_bad(self):
        """A 0.05% gain is below the 0.1% improvement threshold."""
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, _ = schedule_step(sched, 1000.0, cfg)
        sched, _ = schedule_step(sched, 999.5, cfg)
        assert sched.decay_started
        assert sched.best_ppl == 1000.0

    def test_two_bad_epochs_after_decay_stop(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, stop = schedule_step(sched, 100.0, cfg)
        assert not stop
        sched, stop = schedule_step(sched, 101.0, cfg)
        assert not stop  # first bad epoch starts the decay
        sched, stop = schedule_step(sched, 102.0, cfg)
        assert stop

    def test_recovery_resets_patience_but_not_rate(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, _ = schedule_step(sched, 100.0, cfg)
        sched, stop = schedule_step(sched, 101.0, cfg)   # decay 1
        sched, stop = schedule_step(sched, 90.0, cfg)    # improves again
        assert not stop and sched.bad_epochs == 0
        assert sched.current_lr == pytest.approx(0.05 / 1.5)
        sched, stop = schedule_step(sched, 95.0, cfg)    # decay 2
        assert not stop
        sched, stop = schedule_step(sched, 95.0, cfg)    # second straight bad
        assert stop

    def test_rate_after_n_cuts_is_exact(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        sched, _ = schedule_step(sched, 100.0, cfg)  # baseline epoch
        rates = []
        ppl = 100.0
        for _ in range(6):
            ppl += 1.0  # never improves
            sched, _ = schedule_step(sched, ppl, cfg)
            rates.append(sched.current_lr)
        for n, lr in enumerate(rates, start=1):
            assert lr == 0.05 / 1.5 ** n  # computed from scratch, no drift
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_max_epochs_stops(self):
        cfg = small_config(max_epochs=3)
        sched = make_schedule(cfg)
        stops = []
        for ppl in (50.0, 40.0, 30.0):
            sched, stop = schedule_step(sched, ppl, cfg)
            stops.append(stop)
        assert stops == [False, False, True]

    def test_rejects_bad_perplexity(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        for bad in (float("nan"), float("inf"), 0.0, -3.0):
            with pytest.raises(ValueError):
                schedule_step(sched, bad, cfg)

    def test_input_not_mutated(self):
        cfg = self.config()
        sched = make_schedule(cfg)
        before = ScheduleState(**vars(sched))
        schedule_step(sched, 123.0, cfg)
        assert vars(sched) == vars(before)


class TestConfig:
    def test_default_spans_depend_on_architecture(self):
        assert TrainConfig(arch="srn").resolved_bptt() == 10
        assert TrainConfig(arch="scrn").resolved_bptt() == 50
        assert TrainConfig(arch="scrn-adaptive").resolved_bptt() == 50
        assert TrainConfig(arch="lstm").resolved_bptt() == 50
        assert TrainConfig(arch="srn", bptt_span=7).resolved_bptt() == 7

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            small_config(arch="gru").validate()
        with pytest.raises(ValueError):
            small_config(bptt_span=3, update_interval=5).validate()
        with pytest.raises(ValueError):
            small_config(truncation="wrapping").validate()
        with pytest.raises(ValueError):
            small_config(clip_norm=-1.0).validate()
        with pytest.raises(ValueError):
            small_config(precision="float16").validate()
        with pytest.raises(ValueError):
            small_config(lr_decay_divisor=1.0).validate()
        small_config().validate()


def oracle_full_bptt(model, ids):
    """Whole-sequence BPTT written straight from the update equations:
    forward pass storing every state, then one reverse sweep.  No
    windowing, no tape; float64 throughout."""
    cell, out = model.cell, model.out
    u, v = out["U"], out["V"]
    m = model.hidden_size
    p = model.context_size
    a, b, pp, r = cell["A"], cell["B"], cell["P"], cell["R"]
    if model.arch == "scrn-adaptive":
        decay = sigmoid(cell["beta"])
    else:
        decay = np.full(p, model.alpha)
    hs = [np.zeros(m)]
    ss = [np.zeros(p)]
    douts = []
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    for tok in ids:
        h, s = hs[-1], ss[-1]
        logits = h @ u + s @ v
        e = np.exp(logits - logits.max())
        probs = e / e.sum()
        dlogits = probs.copy()
        dlogits[tok] -= 1.0
        du += np.outer(h, dlogits)
        dv += np.outer(s, dlogits)
        douts.append((dlogits @ u.T, dlogits @ v.T))
        s_new = (1.0 - decay) * b[tok] + decay * s
        h_new = 1.0 / (1.0 + np.exp(-(s_new @ pp + a[tok] + h @ r)))
        hs.append(h_new)
        ss.append(s_new)
    da = np.zeros_like(a)
    db = np.zeros_like(b)
    dp = np.zeros_like(pp)
    dr = np.zeros_like(r)
    dbeta = np.zeros(p)
    dh = np.zeros(m)
    ds = np.zeros(p)
    for t in range(len(ids) - 1, -1, -1):
        tok = ids[t]
        h_new, s_new = hs[t + 1], ss[t + 1]
        h_prev, s_prev = hs[t], ss[t]
        dz = dh * h_new * (1.0 - h_new)
        da[tok] += dz
        dr += np.outer(h_prev, dz)
        dp += np.outer(s_new, dz)
        ds_new = ds + dz @ pp.T
        db[tok] += (1.0 - decay) * ds_new
        dbeta += ds_new * (s_prev - b[tok]) * decay * (1.0 - decay)
        dh = dz @ r.T + douts[t][0]
        ds = decay * ds_new + douts[t][1]
    grads = {"A": da, "B": db, "P": dp, "R": dr, "U": du, "V": dv}
    if model.arch == "scrn-adaptive":
        grads["beta"] = dbeta
    return grads


class TestFullBpttOracle:
    @pytest.mark.parametrize("arch", ["scrn", "scrn-adaptive"])
    @pytest.mark.parametrize("truncation", ["sliding", "tiling"])
    def test_single_update_matches_whole_sequence_backprop(self, arch, truncation):
        rng = np.random.default_rng(17)
        d, n = 11, 24
        ids = rng.integers(0, d, size=n)
        model = create_model(arch, d, 5, 3, seed=3, dtype=np.float64)
        cfg = small_config(arch=arch, hidden_size=5, context_size=3,
                           num_streams=1, bptt_span=n, update_interval=n,
                           clip_norm=None, truncation=truncation)
        seen = []
        streams = make_streams(ids, 1)
        sched = make_schedule(cfg)
        train_epoch(model, streams, cfg, sched,
                    grad_observer=lambda t, g: seen.append((t, {k: x.copy() for k, x in g.items()})))
        assert len(seen) == 1 and seen[0][0] == n - 1
        got = seen[0][1]
        # the oracle runs on the pre-update parameters
        fresh = create_model(arch, d, 5, 3, seed=3, dtype=np.float64)
        want = oracle_full_bptt(fresh, ids)
        assert set(got) == set(want)
        for name in want:
            np.testing.assert_allclose(got[name], want[name], rtol=1e-10,
                                       atol=1e-12, err_msg=name)

    def test_stream_averaging(self):
        """Two identical streams must average to the single-stream gradient."""
        rng = np.random.default_rng(18)
        d, n = 7, 12
        ids = rng.integers(0, d, size=n)
        grads = {}
        for copies in (1, 2):
            model = create_model("scrn", d, 4, 2, seed=5, dtype=np.float64)
            cfg = small_config(num_streams=copies, hidden_size=4, context_size=2,
                               bptt_span=n, update_interval=n, clip_norm=None)
            seen = []
            streams = make_streams(np.tile(ids, copies), copies)
            train_epoch(model, streams, cfg, make_schedule(cfg),
                        grad_observer=lambda t, g: seen.append(g))
            grads[copies] = seen[0]
        for name in grads[1]:
            np.testing.assert_allclose(grads[2][name], grads[1][name],
                                       rtol=1e-12, err_msg=name)


class TestTrainEpoch:
    def test_zero_learning_rate_leaves_parameters_bitwise_identical(self):
        rng = np.random.default_rng(19)
        ids = rng.integers(0, 9, size=64)
        model = create_model("scrn", 9, 4, 2, seed=2, dtype=np.float32)
        before = {k: v.copy() for k, v in model.blocks().items()}
        cfg = small_config(hidden_size=4, context_size=2, learning_rate=0.0,
                           precision="float32")
        sched = make_schedule(cfg)
        stats = train_epoch(model, make_streams(ids, 2), cfg, sched)
        for name, block in model.blocks().items():
            np.testing.assert_array_equal(block, before[name], err_msg=name)
        assert stats.tokens == 64
        assert math.isfinite(stats.mean_nll)

    def test_repeat_epoch_is_deterministic(self):
        rng = np.random.default_rng(20)
        ids = rng.integers(0, 9, size=96)
        runs = []
        for _ in range(2):
            model = create_model("scrn", 9, 4, 2, seed=2, dtype=np.float32)
            cfg = small_config(hidden_size=4, context_size=2, precision="float32")
            stats = train_epoch(model, make_streams(ids, 2), cfg, make_schedule(cfg))
            runs.append((stats.total_nll, {k: v.copy() for k, v in model.blocks().items()}))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][name], runs[1][1][name])

    def test_learns_alternating_sequence(self):
        """On a deterministic 2-token corpus perplexity approaches 1."""
        ids = np.tile([0, 1], 128)
        model = create_model("srn", 2, 4, 0, seed=4, dtype=np.float64)
        cfg = small_config(arch="srn", hidden_size=4, context_size=0,
                           num_streams=1, bptt_span=8, update_interval=4,
                           learning_rate=0.2)
        sched = make_schedule(cfg)
        streams = make_streams(ids, 1)
        for _ in range(50):
            train_epoch(model, streams, cfg, sched)
        assert perplexity(model, ids).perplexity < 1.05

    def test_divergence_names_step_and_stream(self):
        model = create_model("scrn", 5, 4, 2, seed=1, dtype=np.float64)
        model.cell["A"][:, :] = np.nan
        cfg = small_config(hidden_size=4, context_size=2)
        ids = np.arange(40) % 5
        with pytest.raises(TrainDivergence) as info:
            train_epoch(model, make_streams(ids, 2), cfg, make_schedule(cfg))
        # first loss is computed from the clean zero state; the poisoned
        # embedding only lands in the state afterwards
        assert info.value.step == 1
        assert info.value.stream == 0
        assert "step 1" in str(info.value)

    def test_stream_count_mismatch_rejected(self):
        model = create_model("scrn", 5, 4, 2, seed=1)
        cfg = small_config(num_streams=4)
        with pytest.raises(ValueError):
            train_epoch(model, make_streams(np.arange(40) % 5, 2), cfg,
                        make_schedule(cfg))

    def test_every_loss_reaches_exactly_one_update(self):
        """Sum of observed raw gradients == gradient of the whole epoch's
        loss when parameters are frozen (lr = 0): nothing dropped, nothing
        double-counted inside the window."""
        rng = np.random.default_rng(21)
        d, n = 8, 20
        ids = rng.integers(0, d, size=n)
        model = create_model("scrn", d, 4, 2, seed=6, dtype=np.float64)
        cfg = small_config(hidden_size=4, context_size=2, num_streams=1,
                           learning_rate=0.0, clip_norm=None,
                           bptt_span=n, update_interval=5)
        total = {}
        def add(_, g):
            for k, x in g.items():
                total[k] = total.get(k, 0) + x
        train_epoch(model, make_streams(ids, 1), cfg, make_schedule(cfg),
                    grad_observer=add)
        want = oracle_full_bptt(model, ids)
        for name in want:
            np.testing.assert_allclose(total[name], want[name], rtol=1e-10,
                                       atol=1e-12, err_msg=name)


class TestEpochStats:
    def test_mean_and_rate(self):
        stats = EpochStats(tokens=200, total_nll=100.0, seconds=4.0)
        assert stats.mean_nll == 0.5
        assert stats.tokens_per_second == 50.0


class TestCheckpointing:
    def build(self, tmp_path, **kw):
        cfg = small_config(precision="float32", **kw)
        model = create_model(cfg.arch, 9, cfg.hidden_size, cfg.context_size,
                             seed=3, dtype=np.float32)
        sched = make_schedule(cfg)
        sched, _ = schedule_step(sched, 100.0, cfg)
        sched, _ = schedule_step(sched, 101.0, cfg)  # forces one decay
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, cfg, sched, path)
        return model, cfg, sched, path

    def test_round_trip_restores_everything(self, tmp_path):
        model, cfg, sched, path = self.build(tmp_path)
        loaded, cfg2, sched2 = load_checkpoint(path)
        assert loaded.arch == model.arch
        for name, block in model.blocks().items():
            np.testing.assert_array_equal(loaded.blocks()[name], block,
                                          err_msg=name)
            assert loaded.blocks()[name].dtype == block.dtype
        assert cfg2 == cfg
        assert sched2 == sched
        assert sched2.current_lr == 0.05 / 1.5

    def test_save_is_byte_stable(self, tmp_path):
        model, cfg, sched, path = self.build(tmp_path)
        loaded, cfg2, sched2 = load_checkpoint(path)
        path2 = tmp_path / "again.ckpt"
        save_checkpoint(loaded, cfg2, sched2, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        _, _, _, path = self.build(tmp_path)
        raw = path.read_bytes()
        bad = tmp_path / "cut.ckpt"
        bad.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(bad)

    def test_resume_equals_uninterrupted_training(self, tmp_path):
        """Stopping at an epoch boundary and resuming from the checkpoint
        reproduces uninterrupted training bit for bit."""
        rng = np.random.default_rng(22)
        ids = rng.integers(0, 9, size=120)
        valid = rng.integers(0, 9, size=60)
        cfg = small_config(precision="float32", num_streams=2)
        streams = make_streams(ids, 2)

        def epoch(model, sched):
            train_epoch(model, streams, cfg, sched)
            ppl = perplexity(model, valid).perplexity
            new, _ = schedule_step(sched, ppl, cfg)
            return new

        straight = create_model("scrn", 9, cfg.hidden_size, cfg.context_size,
                                seed=7, dtype=np.float32)
        sched = make_schedule(cfg)
        for _ in range(4):
            sched = epoch(straight, sched)

        part = create_model("scrn", 9, cfg.hidden_size, cfg.context_size,
                            seed=7, dtype=np.float32)
        sched_b = make_schedule(cfg)
        for _ in range(2):
            sched_b = epoch(part, sched_b)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(part, cfg, sched_b, path)
        resumed, cfg_r, sched_r = load_checkpoint(path)
        for _ in range(2):
            sched_r = epoch(resumed, sched_r)

        assert sched_r == sched
        for name, block in straight.blocks().items():
            np.testing.assert_array_equal(resumed.blocks()[name], block,
                                          err_msg=name)
