import numpy as np
import pytest

from noisytrain.kernel import GradientTape, Matrix, OptimizerState, ShapeMismatchError, backward
from noisytrain.model import (Arch, PSI, TwinNetworks, ensemble_softmax,
                              forward_projection, forward_softmax, init_network,
                              init_twins, load_checkpoint, save_checkpoint)
from noisytrain.training import loss_contrastive


ARCH = Arch(in_dim=5, hidden=8, num_classes=4, embed_dim=3)


class TestInit:
    def test_same_seed_identical(self):
        a = init_network(ARCH, seed=3)
        b = init_network(ARCH, seed=3)
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()

    def test_distinct_seeds_differ(self):
        a = init_network(ARCH, seed=3)
        b = init_network(ARCH, seed=4)
        assert a.params["w1"].data.tobytes() != b.params["w1"].data.tobytes()

    def test_biases_zero(self):
        net = init_network(ARCH, seed=3)
        for name in ("b1", "b2", "bc", "bp"):
            assert np.all(net.params[name].data == 0.0)

    def test_logits_finite_on_random_input(self):
        net = init_network(ARCH, seed=3)
        x = Matrix(np.random.default_rng(0).normal(size=(16, 5)))
        probs = forward_softmax(net, x)
        assert np.all(np.isfinite(probs.data))

    def test_untrained_softmax_near_uniform(self):
        net = init_network(ARCH, seed=3)
        x = Matrix(np.random.default_rng(1).normal(size=(1000, 5)))
        probs = forward_softmax(net, x)
        mean_max = probs.data.max(axis=1).mean()
        assert mean_max < 2 / ARCH.num_classes + 0.1

    def test_arch_validation(self):
        with pytest.raises(ValueError):
            Arch(in_dim=0, hidden=8, num_classes=4, embed_dim=3)


class TestForward:
    def test_softmax_rows_sum_to_one(self):
        net = init_network(ARCH, seed=5)
        x = Matrix(np.random.default_rng(2).normal(size=(7, 5)))
        out = forward_softmax(net, x)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-9)
        assert out.shape == (7, 4)

    def test_duplicate_input_rows_duplicate_outputs(self):
        net = init_network(ARCH, seed=5)
        row = np.random.default_rng(3).normal(size=(1, 5))
        x = Matrix(np.vstack([row, row]))
        out = forward_softmax(net, x)
        assert np.array_equal(out.data[0], out.data[1])

    def test_input_width_checked(self):
        net = init_network(ARCH, seed=5)
        with pytest.raises(ShapeMismatchError):
            forward_softmax(net, Matrix(np.zeros((2, 3))))

    def test_projection_rows_unit_norm(self):
        net = init_network(ARCH, seed=5)
        x = Matrix(np.random.default_rng(4).normal(size=(6, 5)))
        z = forward_projection(net, x)
        assert z.shape == (6, 3)
        assert np.allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)

    def test_identical_inputs_identical_embeddings(self):
        net = init_network(ARCH, seed=5)
        x = Matrix(np.random.default_rng(5).normal(size=(3, 5)))
        assert np.array_equal(forward_projection(net, x).data,
                              forward_projection(net, x).data)

    def test_embeddings_move_after_contrastive_step(self):
        from noisytrain.kernel import sgd_step
        net = init_network(ARCH, seed=5)
        x = Matrix(np.random.default_rng(6).normal(size=(4, 5)))
        before = forward_projection(net, x).data.copy()
        tape = GradientTape()
        for p in net.group(PSI).values():
            tape.watch(p)
        z = forward_projection(net, x, tape)
        loss = loss_contrastive(z, kappa=0.5, tape=tape)
        grads = backward(tape, loss)
        state = OptimizerState(learning_rate=0.5)
        group = net.group(PSI)
        net.params.update(sgd_step(state, group, {n: grads[p] for n, p in group.items()}))
        after = forward_projection(net, x).data
        assert not np.array_equal(before, after)


class TestEnsemble:
    def test_identical_twins_equal_single(self):
        net = init_network(ARCH, seed=9)
        twins = TwinNetworks(net, net)
        x = Matrix(np.random.default_rng(7).normal(size=(5, 5)))
        assert np.allclose(ensemble_softmax(twins, x).data,
                           forward_softmax(net, x).data, atol=1e-15)

    def test_mean_of_distributions(self):
        twins = init_twins(ARCH, seed=0)
        x = Matrix(np.random.default_rng(8).normal(size=(5, 5)))
        s1 = forward_softmax(twins.net1, x).data
        s2 = forward_softmax(twins.net2, x).data
        ens = ensemble_softmax(twins, x).data
        assert np.allclose(ens, (s1 + s2) / 2, atol=1e-15)
        assert np.allclose(ens.sum(axis=1), 1.0, atol=1e-9)

    def test_permutation_symmetric(self):
        twins = init_twins(ARCH, seed=0)
        swapped = TwinNetworks(twins.net2, twins.net1)
        x = Matrix(np.random.default_rng(9).normal(size=(5, 5)))
        assert np.array_equal(ensemble_softmax(twins, x).data,
                              ensemble_softmax(swapped, x).data)

    def test_twins_never_share_parameters(self):
        twins = init_twins(ARCH, seed=0)
        assert twins.net1.params["w1"].data.tobytes() != twins.net2.params["w1"].data.tobytes()


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        twins = init_twins(ARCH, seed=21)
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(twins, path)
        loaded = load_checkpoint(path)
        assert loaded.net1.arch == twins.net1.arch
        assert loaded.net1.seed == twins.net1.seed
        for net_a, net_b in ((twins.net1, loaded.net1), (twins.net2, loaded.net2)):
            for name in net_a.params:
                assert net_a.params[name].data.tobytes() == net_b.params[name].data.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_checkpoint(str(path))
