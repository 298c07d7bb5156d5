import numpy as np
import pytest

from conftest import finite_difference_grad, max_relative_error
from noisytrain.data import AugmentationSpec, inject_symmetric_noise, make_gaussian_blobs
from noisytrain.kernel import GradientTape, Matrix, OptimizerState, backward
from noisytrain.model import (ALL_GROUPS, Arch, TwinNetworks, forward_logits,
                              forward_softmax, init_network, init_twins)
from noisytrain.selection import CutoffParams, DivergenceReport, uniform_select
from noisytrain.training import (AblationFlags, DegenerateBatchError,
                                 Hyperparams, blend_targets, decayed_lr,
                                 guess_pseudo_labels, loss_contrastive,
                                 loss_lu, loss_lx, loss_reg, mixmatch_assemble,
                                 mixup, mixup_with_lambda, one_hot,
                                 refine_labels, refinement_weights, sharpen,
                                 total_loss, train_epoch, train_half_epoch,
                                 warmup_train)

AUG = AugmentationSpec()
CUTOFF = CutoffParams()
FLAGS = AblationFlags()


def snapshot(net):
    return {name: m.data.copy() for name, m in net.params.items()}


def params_equal(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


class TestSharpen:
    def test_uniform_fixed_point(self):
        out = sharpen(Matrix([[0.25, 0.25, 0.25, 0.25]]), 0.5)
        assert np.allclose(out.data, 0.25, atol=1e-12)

    def test_worked_value(self):
        out = sharpen(Matrix([[0.8, 0.2]]), 0.5)
        assert np.allclose(out.data, [[0.941176, 0.058824]], atol=1e-6)

    def test_temperature_one_identity(self):
        p = Matrix([[0.3, 0.6, 0.1]])
        assert np.allclose(sharpen(p, 1.0).data, p.data, atol=1e-12)

    def test_one_hot_unchanged(self):
        p = Matrix([[0.0, 1.0, 0.0]])
        assert np.array_equal(sharpen(p, 0.5).data, p.data)


class TestRefinementWeights:
    def test_threshold_behavior(self):
        d = np.array([0.0, 0.49, 0.5, 0.8, 1.0])
        w = refinement_weights(d, d_omega=0.5)
        assert w.tolist() == [1.0, 1.0, 0.5, pytest.approx(0.2), 0.0]

    def test_range(self, rng):
        w = refinement_weights(rng.uniform(0, 1, 100), d_omega=0.5)
        assert np.all((w >= 0.0) & (w <= 1.0))


class TestRefineLabels:
    def test_blend_worked_value(self):
        out = blend_targets(Matrix([[1.0, 0.0]]), Matrix([[0.6, 0.4]]), np.array([0.3]))
        assert np.allclose(out.data, [[0.72, 0.28]], atol=1e-12)

    def test_weight_one_keeps_one_hot(self):
        net = init_network(Arch(3, 8, 2, 2), seed=1)
        x = Matrix(np.random.default_rng(0).normal(size=(4, 3)))
        y = one_hot([0, 1, 0, 1], 2)
        out = refine_labels(net, x, x, y, np.ones(4), T=0.5)
        assert np.allclose(out.data, y.data, atol=1e-12)

    def test_weight_zero_gives_model_average(self):
        net = init_network(Arch(3, 8, 2, 2), seed=1)
        rng = np.random.default_rng(0)
        x1 = Matrix(rng.normal(size=(4, 3)))
        x2 = Matrix(rng.normal(size=(4, 3)))
        y = one_hot([0, 1, 0, 1], 2)
        out = refine_labels(net, x1, x2, y, np.zeros(4), T=1.0)
        expected = (forward_softmax(net, x1).data + forward_softmax(net, x2).data) / 2
        assert np.allclose(out.data, expected, atol=1e-9)


class TestGuessPseudoLabels:
    def test_identical_twins_same_view_equals_single_forward(self):
        net = init_network(Arch(3, 8, 2, 2), seed=1)
        twins = TwinNetworks(net, net)
        x = Matrix(np.random.default_rng(0).normal(size=(4, 3)))
        q = guess_pseudo_labels(twins, x, x, T=1.0)
        assert np.allclose(q.data, forward_softmax(net, x).data, atol=1e-9)

    def test_rows_sum_to_one(self):
        twins = init_twins(Arch(3, 8, 4, 2), seed=5)
        rng = np.random.default_rng(1)
        q = guess_pseudo_labels(twins, Matrix(rng.normal(size=(6, 3))),
                                Matrix(rng.normal(size=(6, 3))), T=0.5)
        assert np.allclose(q.data.sum(axis=1), 1.0, atol=1e-6)

    def test_average_of_four_forwards(self):
        twins = init_twins(Arch(3, 8, 4, 2), seed=5)
        rng = np.random.default_rng(1)
        u1 = Matrix(rng.normal(size=(6, 3)))
        u2 = Matrix(rng.normal(size=(6, 3)))
        q = guess_pseudo_labels(twins, u1, u2, T=1.0)
        manual = (forward_softmax(twins.net1, u1).data + forward_softmax(twins.net1, u2).data
                  + forward_softmax(twins.net2, u1).data + forward_softmax(twins.net2, u2).data) / 4
        manual = manual / manual.sum(axis=1, keepdims=True)
        assert np.allclose(q.data, manual, atol=1e-9)

    def test_no_tape_interaction(self):
        twins = init_twins(Arch(3, 8, 2, 2), seed=5)
        tape = GradientTape()
        for p in twins.net1.params.values():
            tape.watch(p)
        x = Matrix(np.random.default_rng(2).normal(size=(4, 3)))
        guess_pseudo_labels(twins, x, x, T=0.5)
        assert tape.num_records == 0


class TestMixup:
    def test_lambda_one_returns_first(self):
        x1, t1 = Matrix([[1.0, 2.0]]), Matrix([[1.0, 0.0]])
        x2, t2 = Matrix([[5.0, 6.0]]), Matrix([[0.0, 1.0]])
        out = mixup_with_lambda(x1, t1, x2, t2, np.array([1.0]))
        assert np.array_equal(out.inputs.data, x1.data)
        assert np.array_equal(out.targets.data, t1.data)

    def test_worked_target_mix(self):
        out = mixup_with_lambda(Matrix([[0.0]]), Matrix([[1.0, 0.0]]),
                                Matrix([[1.0]]), Matrix([[0.0, 1.0]]), np.array([0.7]))
        assert np.allclose(out.targets.data, [[0.7, 0.3]], atol=1e-12)

    def test_targets_stay_distributions(self, rng):
        t1 = Matrix(rng.dirichlet(np.ones(3), size=8))
        t2 = Matrix(rng.dirichlet(np.ones(3), size=8))
        x = Matrix(rng.normal(size=(8, 2)))
        out = mixup(x, t1, x, t2, alpha=4.0, rng=np.random.default_rng(3))
        assert np.allclose(out.targets.data.sum(axis=1), 1.0, atol=1e-6)

    def test_lambda_prime_at_least_half(self):
        x = Matrix(np.zeros((200, 2)))
        t = Matrix(np.tile([1.0, 0.0], (200, 1)))
        out = mixup(x, t, x, t, alpha=4.0, rng=np.random.default_rng(4))
        assert np.all((out.lambda_prime >= 0.5) & (out.lambda_prime <= 1.0))


class TestMixmatchAssemble:
    def _entries(self, rng, n, dims=3, classes=2):
        return (Matrix(rng.normal(size=(n, dims))),
                Matrix(rng.dirichlet(np.ones(classes), size=n)))

    def test_sizes(self, rng):
        xi, xt = self._entries(rng, 4)
        ui, ut = self._entries(rng, 6)
        mx, mu = mixmatch_assemble(xi, xt, ui, ut, 4.0, np.random.default_rng(0))
        assert mx.inputs.shape == (4, 3) and mx.targets.shape == (4, 2)
        assert mu.inputs.shape == (6, 3) and mu.targets.shape == (6, 2)

    def test_each_row_is_convex_combo_with_union(self, rng):
        xi, xt = self._entries(rng, 4)
        ui, ut = self._entries(rng, 4)
        mx, _ = mixmatch_assemble(xi, xt, ui, ut, 4.0, np.random.default_rng(1))
        union = np.vstack([xi.data, ui.data])
        for i in range(4):
            lam = mx.lambda_prime[i]
            if lam == 1.0:
                continue
            partner = (mx.inputs.data[i] - lam * xi.data[i]) / (1 - lam)
            dists = np.abs(union - partner).max(axis=1)
            assert dists.min() < 1e-8

    def test_deterministic_given_seed(self, rng):
        xi, xt = self._entries(rng, 4)
        ui, ut = self._entries(rng, 4)
        a = mixmatch_assemble(xi, xt, ui, ut, 4.0, np.random.default_rng(7))
        b = mixmatch_assemble(xi, xt, ui, ut, 4.0, np.random.default_rng(7))
        assert a[0].inputs.data.tobytes() == b[0].inputs.data.tobytes()
        assert a[1].targets.data.tobytes() == b[1].targets.data.tobytes()

    def test_empty_collection_raises(self, rng):
        xi, xt = self._entries(rng, 4)
        empty_i, empty_t = Matrix(np.zeros((0, 3))), Matrix(np.zeros((0, 2)))
        with pytest.raises(DegenerateBatchError):
            mixmatch_assemble(xi, xt, empty_i, empty_t, 4.0, np.random.default_rng(0))


class TestLossValues:
    def test_lx_perfect_one_hot_is_zero(self):
        logits = Matrix([[100.0, 0.0, 0.0]])
        target = Matrix([[1.0, 0.0, 0.0]])
        assert loss_lx(logits, target).item() == pytest.approx(0.0, abs=1e-12)

    def test_lx_uniform_entropy(self):
        val = loss_lx(Matrix([[0.0, 0.0]]), Matrix([[0.5, 0.5]])).item()
        assert val == pytest.approx(np.log(2), abs=1e-12)

    def test_lx_nonnegative_for_one_hot(self, rng):
        for _ in range(20):
            logits = Matrix(rng.normal(size=(5, 4)))
            targets = one_hot(rng.integers(0, 4, 5), 4)
            assert loss_lx(logits, targets).item() >= 0.0

    def test_lu_perfect_match_zero(self):
        logits = Matrix([[0.0, 0.0]])
        assert loss_lu(logits, Matrix([[0.5, 0.5]])).item() == pytest.approx(0.0, abs=1e-12)

    def test_lu_worked_value(self):
        logits = Matrix([[np.log(0.6), np.log(0.4)]])
        assert loss_lu(logits, Matrix([[1.0, 0.0]])).item() == pytest.approx(0.32, abs=1e-9)

    def test_lu_bounded_by_two(self, rng):
        for _ in range(20):
            logits = Matrix(rng.normal(size=(6, 3), scale=5))
            targets = Matrix(rng.dirichlet(np.ones(3), size=6))
            assert loss_lu(logits, targets).item() <= 2.0

    def test_reg_uniform_mean_zero(self):
        logits = Matrix([[1.0, 2.0], [2.0, 1.0]])  # softmax rows mirror each other
        assert loss_reg(logits, 2).item() == pytest.approx(0.0, abs=1e-12)

    def test_reg_worked_value(self):
        logits = Matrix([[np.log(0.9), np.log(0.1)]])
        assert loss_reg(logits, 2).item() == pytest.approx(0.510826, abs=1e-6)

    def test_reg_nonnegative(self, rng):
        for _ in range(20):
            logits = Matrix(rng.normal(size=(5, 4), scale=3))
            assert loss_reg(logits, 4).item() >= -1e-12

    def test_contrastive_single_pair_exactly_zero(self):
        z = Matrix([[1.0, 0.0], [0.0, 1.0]])
        assert loss_contrastive(z, kappa=0.05).item() == 0.0

    def test_contrastive_identical_embeddings(self):
        z = Matrix(np.tile([1.0, 0.0], (4, 1)))
        assert loss_contrastive(z, kappa=0.05).item() == pytest.approx(np.log(3), abs=1e-9)

    def test_contrastive_orthogonal_pairs_near_zero(self):
        z = Matrix([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        assert loss_contrastive(z, kappa=0.05).item() < 1e-8

    def test_contrastive_swap_invariance(self, rng):
        z = rng.normal(size=(8, 4))
        z = z / np.linalg.norm(z, axis=1, keepdims=True)
        swapped = z.copy()
        for b in range(4):
            swapped[[2 * b, 2 * b + 1]] = swapped[[2 * b + 1, 2 * b]]
        a = loss_contrastive(Matrix(z), 0.05).item()
        b = loss_contrastive(Matrix(swapped), 0.05).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_contrastive_empty_batch_zero(self):
        assert loss_contrastive(Matrix(np.zeros((0, 3))), 0.05).item() == 0.0

    def test_total_loss_combinations(self):
        hp = Hyperparams()
        zero = Matrix([[0.0]])
        assert total_loss(zero, zero, zero, zero, hp).item() == 0.0
        lx = Matrix([[0.5]])
        hp0 = Hyperparams(lambda_u=0.0, lambda_c=0.0, lambda_r=0.0)
        assert total_loss(lx, Matrix([[9.0]]), Matrix([[9.0]]), Matrix([[9.0]]), hp0).item() == 0.5
        val = total_loss(Matrix([[0.5]]), Matrix([[0.01]]), Matrix([[0.1]]),
                         Matrix([[1.0]]), Hyperparams()).item()
        assert val == pytest.approx(0.925, abs=1e-12)


class TestLossGradients:
    def _net_and_inputs(self, seed=0):
        arch = Arch(in_dim=3, hidden=4, num_classes=3, embed_dim=3)
        net = init_network(arch, seed=seed)
        rng = np.random.default_rng(seed + 100)
        x = Matrix(rng.normal(size=(4, 3)))
        targets = Matrix(rng.dirichlet(np.ones(3), size=4))
        return net, x, targets

    def test_total_loss_matches_finite_differences(self):
        from noisytrain.model import forward_projection
        net, x, targets = self._net_and_inputs()
        hp = Hyperparams()

        def forward(tape=None):
            logits = forward_logits(net, x, tape)
            lx = loss_lx(logits, targets, tape)
            lu = loss_lu(logits, targets, tape)
            lreg = loss_reg(logits, 3, tape)
            z = forward_projection(net, x, tape)
            lc = loss_contrastive(z, hp.kappa, tape)
            return total_loss(lx, lu, lreg, lc, hp, tape)

        tape = GradientTape()
        mats = [net.params[name] for name in ALL_GROUPS]
        for m in mats:
            tape.watch(m)
        grads = backward(tape, forward(tape))
        fd = finite_difference_grad(lambda: forward().item(), mats)
        for m, numeric in zip(mats, fd):
            assert max_relative_error(grads[m].data, numeric) < 1e-4


class TestWarmup:
    def _noisy_setup(self, rate=0.0):
        ds = make_gaussian_blobs(3, 40, 4, 8.0, seed=6)
        if rate > 0:
            ds = inject_symmetric_noise(ds, rate, seed=7)
        twins = init_twins(Arch(4, 32, 3, 8), seed=1)
        opts = (OptimizerState(0.02, 0.9, 5e-4), OptimizerState(0.02, 0.9, 5e-4))
        return ds, twins, opts

    def test_zero_epochs_no_change(self):
        ds, twins, opts = self._noisy_setup()
        before = snapshot(twins.net1)
        warmup_train(twins, opts, ds, Hyperparams(seed=1, batch_size=32), epochs=0)
        assert params_equal(before, snapshot(twins.net1))

    def test_clean_blobs_reach_high_train_accuracy(self):
        from noisytrain.metrics import accuracy
        ds, twins, opts = self._noisy_setup(rate=0.0)
        warmup_train(twins, opts, ds, Hyperparams(seed=1, batch_size=32), epochs=10)
        assert accuracy(twins, ds.features, ds.given_labels) > 0.95

    def test_projection_head_untouched(self):
        ds, twins, opts = self._noisy_setup(rate=0.2)
        wp_before = twins.net1.params["wp"].data.copy()
        warmup_train(twins, opts, ds, Hyperparams(seed=1, batch_size=32), epochs=2)
        assert np.array_equal(wp_before, twins.net1.params["wp"].data)

    def test_returns_one_loss_per_epoch(self):
        ds, twins, opts = self._noisy_setup(rate=0.2)
        losses = warmup_train(twins, opts, ds, Hyperparams(seed=1, batch_size=32), epochs=3)
        assert len(losses) == 3
        assert losses[0] > losses[-1]


class TestTrainEpoch:
    def _setup(self, rate=0.4, seed=3):
        ds = make_gaussian_blobs(3, 30, 4, 8.0, seed=seed)
        ds = inject_symmetric_noise(ds, rate, seed=seed + 1)
        hp = Hyperparams(seed=seed, batch_size=16, warmup_epochs=1, total_epochs=3)
        twins = init_twins(Arch(4, 16, 3, 4), seed=seed)
        opts = (OptimizerState(hp.lr, hp.momentum, hp.weight_decay),
                OptimizerState(hp.lr, hp.momentum, hp.weight_decay))
        warmup_train(twins, opts, ds, hp, epochs=1)
        return ds, hp, twins, opts

    def test_other_network_frozen_during_half_epoch(self):
        ds, hp, twins, opts = self._setup()
        net2_before = snapshot(twins.net2)
        net1_before = snapshot(twins.net1)
        train_half_epoch(twins, 1, opts, ds, hp, AUG, CUTOFF, FLAGS, epoch=1)
        assert params_equal(net2_before, snapshot(twins.net2))
        assert not params_equal(net1_before, snapshot(twins.net1))

    def test_epoch_is_deterministic(self):
        ds, hp, twins_a, opts_a = self._setup()
        _, _, twins_b, opts_b = self._setup()
        train_epoch(twins_a, opts_a, ds, hp, AUG, CUTOFF, FLAGS, epoch=1)
        train_epoch(twins_b, opts_b, ds, hp, AUG, CUTOFF, FLAGS, epoch=1)
        assert params_equal(snapshot(twins_a.net1), snapshot(twins_b.net1))
        assert params_equal(snapshot(twins_a.net2), snapshot(twins_b.net2))

    def test_fresh_selection_each_half(self):
        ds, hp, twins, opts = self._setup()
        record = train_epoch(twins, opts, ds, hp, AUG, CUTOFF, FLAGS, epoch=1)
        assert len(record.halves) == 2
        assert record.halves[0].net_index == 1
        assert record.halves[1].net_index == 2

    def test_noisy_set_empty_degrades_to_clean_only(self):
        ds, hp, twins, opts = self._setup()
        report = DivergenceReport.from_values(np.linspace(0.01, 0.6, len(ds)))
        sel = uniform_select(report, ds.given_labels, 3, 1.0, d_cutoff=0.9)
        assert len(sel.noisy_indices) == 0
        rec = train_half_epoch(twins, 1, opts, ds, hp, AUG, CUTOFF, FLAGS,
                               epoch=1, precomputed=(report, sel))
        assert rec.degenerate == "empty_noisy"
        assert rec.losses["lu"] == 0.0
        assert rec.losses["lc"] == 0.0
        assert rec.losses["lx"] > 0.0

    def test_clean_set_empty_degrades_to_ce(self):
        ds, hp, twins, opts = self._setup()
        report = DivergenceReport.from_values(np.linspace(0.4, 0.99, len(ds)))
        sel = uniform_select(report, ds.given_labels, 3, 0.0, d_cutoff=0.1)
        assert len(sel.clean_indices) == 0
        rec = train_half_epoch(twins, 1, opts, ds, hp, AUG, CUTOFF, FLAGS,
                               epoch=1, precomputed=(report, sel))
        assert rec.degenerate == "empty_clean"
        assert rec.losses["lx"] > 0.0
        assert rec.losses["lu"] == 0.0

    def test_targets_never_tracked_on_tape(self):
        ds, hp, twins, opts = self._setup()
        tape = GradientTape()
        for p in twins.net1.params.values():
            tape.watch(p)
        x = Matrix(ds.features.data[:4])
        y = one_hot(ds.given_labels[:4], 3)
        refined = refine_labels(twins.net1, x, x, y, np.full(4, 0.5), hp.T)
        guessed = guess_pseudo_labels(twins, x, x, hp.T)
        assert tape.num_records == 0
        assert not tape.tracks(refined)
        assert not tape.tracks(guessed)


class TestHyperparams:
    def test_default_values(self):
        hp = Hyperparams()
        assert hp.T == 0.5
        assert hp.lambda_u == 30.0
        assert hp.lambda_c == 0.025
        assert hp.lambda_r == 1.0
        assert hp.kappa == 0.05
        assert hp.d_omega == 0.5
        assert hp.alpha == 4.0
        assert hp.lr == 0.02
        assert hp.momentum == 0.9
        assert hp.weight_decay == 5e-4
        assert hp.batch_size == 64

    def test_validation(self):
        with pytest.raises(ValueError):
            Hyperparams(T=0.0)
        with pytest.raises(ValueError):
            Hyperparams(d_omega=1.5)
        with pytest.raises(ValueError):
            Hyperparams(total_epochs=5, warmup_epochs=10)

    def test_lr_decay_schedule(self):
        hp = Hyperparams(lr=0.02, lr_decay_factor=0.1, lr_decay_every=120)
        assert decayed_lr(hp, 0) == 0.02
        assert decayed_lr(hp, 119) == 0.02
        assert decayed_lr(hp, 120) == pytest.approx(0.002)
        assert decayed_lr(hp, 240) == pytest.approx(0.0002)
