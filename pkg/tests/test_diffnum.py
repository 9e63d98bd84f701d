"""
diffnum tests - forward values, reverse-mode gradients and error paths
"""
import numpy as np
import pytest

from inode_lab.core.exceptions import ContractError, ShapeError
from inode_lab.numerics import diffnum
from inode_lab.numerics.diffnum import Tape, finite_difference_gradient, max_relative_error


def _grad_check(build, inputs, floor=1e-5):
    """Compare tape gradients of ``build`` against central differences."""
    tape = Tape()
    nodes = tape.params(inputs)
    grads = tape.backward(build(nodes))
    numeric = finite_difference_gradient(lambda named: float(build(named)), inputs)
    return max(max_relative_error(grads[k], numeric[k], floor=floor) for k in inputs)


class TestForward:
    """Plain values of elementary graphs"""

    def test_square(self):
        """x=3 through x^2 gives 9"""
        tape = Tape()
        x = tape.param("x", np.array(3.0))
        assert float(diffnum.square(x).value) == pytest.approx(9.0)

    def test_tanh_zero(self):
        assert float(diffnum.tanh(np.array(0.0))) == 0.0

    def test_concat(self):
        out = diffnum.concat([np.array([1.0, 2.0]), np.array([3.0])], axis=-1)
        np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])

    def test_plain_inputs_return_arrays(self):
        """No node among the inputs means nothing is recorded"""
        out = diffnum.add(np.ones(2), np.ones(2))
        assert isinstance(out, np.ndarray)

    def test_ndarray_left_operand_defers_to_node(self):
        tape = Tape()
        x = tape.param("x", np.ones(3))
        out = np.full(3, 2.0) * x
        assert diffnum.is_node(out)
        np.testing.assert_array_equal(out.value, [2.0, 2.0, 2.0])

    def test_softplus_is_stable_for_large_inputs(self):
        out = diffnum.softplus(np.array([-800.0, 0.0, 800.0]))
        assert np.all(np.isfinite(out))
        assert out[2] == pytest.approx(800.0)
        assert out[1] == pytest.approx(np.log(2.0))

    def test_inverse_softplus(self):
        assert float(diffnum.softplus(np.array(diffnum.inverse_softplus(0.1)))) == pytest.approx(0.1)


class TestBackward:
    """Reverse-mode gradients"""

    def test_power_rule(self):
        """d/dx x^2 at 3 is 6"""
        tape = Tape()
        x = tape.param("x", np.array(3.0))
        grads = tape.backward(diffnum.square(x))
        assert float(grads["x"]) == pytest.approx(6.0)

    def test_tanh_slope_at_origin(self):
        tape = Tape()
        x = tape.param("x", np.array(0.0))
        assert float(tape.backward(diffnum.tanh(x))["x"]) == pytest.approx(1.0)

    def test_unused_param_gets_zero_gradient(self):
        tape = Tape()
        x = tape.param("x", np.array(2.0))
        tape.param("unused", np.ones((2, 2)))
        grads = tape.backward(diffnum.square(x))
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_accumulation_over_reuse(self):
        """x reached through three paths receives the sum of the three path gradients"""
        tape = Tape()
        x = tape.param("x", np.array(1.5))
        y = x * x + diffnum.tanh(x)
        grads = tape.backward(y)
        assert float(grads["x"]) == pytest.approx(2 * 1.5 + (1.0 - np.tanh(1.5) ** 2))

    def test_linearity(self, rng):
        """grad(a f + b g) == a grad f + b grad g"""
        w0 = rng.normal(size=(3, 2))
        x = rng.normal(size=(4, 3))

        def f(p):
            return diffnum.sum_(diffnum.tanh(diffnum.matmul(x, p["w"])))

        def g(p):
            return diffnum.sum_(diffnum.square(p["w"]))

        def grad_of(fn):
            tape = Tape()
            return tape.backward(fn(tape.params({"w": w0})))["w"]

        a, b = 2.5, -0.75
        combined = grad_of(lambda p: a * f(p) + b * g(p))
        np.testing.assert_allclose(combined, a * grad_of(f) + b * grad_of(g), rtol=1e-12, atol=1e-12)

    def test_two_layer_mlp_matches_finite_differences(self, rng):
        """A 4-unit tanh network: relative error below 1e-4"""
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=(5, 1))
        inputs = {
            "w0": rng.normal(size=(3, 4)),
            "b0": rng.normal(size=(4,)),
            "w1": rng.normal(size=(4, 1)),
            "b1": rng.normal(size=(1,)),
        }

        def loss(p):
            h = diffnum.tanh(diffnum.matmul(x, p["w0"]) + p["b0"])
            out = diffnum.matmul(h, p["w1"]) + p["b1"]
            return diffnum.mean(diffnum.square(out - y))

        assert _grad_check(loss, inputs) < 1e-4

    @pytest.mark.parametrize("op", ["exp", "log", "sqrt", "sigmoid", "softplus", "relu", "square", "tanh"])
    def test_unary_ops_match_finite_differences(self, rng, op):
        a = rng.uniform(0.5, 2.0, size=(3, 2))
        fn = getattr(diffnum, op)
        assert _grad_check(lambda p: diffnum.sum_(fn(p["a"]) * np.arange(6.0).reshape(3, 2)), {"a": a}) < 1e-4

    def test_structural_ops_match_finite_differences(self, rng):
        inputs = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 2))}
        weights = rng.normal(size=(2, 5))

        def build(p):
            joined = diffnum.concat([p["a"], p["b"]], axis=-1)               # [2, 5]
            stacked = diffnum.stack([joined, joined * 2.0], axis=0)         # [2, 2, 5]
            picked = diffnum.getitem(stacked, (np.array([0, 1, 1]), np.array([1, 0, 1])))  # [3, 5]
            reshaped = diffnum.reshape(picked, (5, 3))
            wide = diffnum.broadcast_to(diffnum.mean(reshaped, axis=0, keepdims=True), (2, 3))
            t = diffnum.transpose(wide)                                     # [3, 2]
            return diffnum.sum_(diffnum.matmul(t, p["b"]) * 0.5) + diffnum.sum_(joined * weights)

        assert _grad_check(build, inputs) < 1e-4

    def test_broadcast_gradients_reduce_to_operand_shape(self, rng):
        inputs = {"bias": rng.normal(size=(3,)), "scale": rng.normal(size=(1, 3))}
        x = rng.normal(size=(4, 3))
        build = lambda p: diffnum.sum_(diffnum.square(x * p["scale"] + p["bias"]) / (1.0 + x * x))  # noqa: E731
        assert _grad_check(build, inputs) < 1e-4

    def test_random_graphs_match_finite_differences(self, rng):
        """Random compositions of supported ops over many draws"""
        ops = [diffnum.tanh, diffnum.sigmoid, diffnum.softplus, diffnum.square, lambda v: v * 0.5 + 1.0]
        worst = 0.0
        for _ in range(100):
            chain = [ops[i] for i in rng.integers(0, len(ops), size=3)]
            x = rng.normal(size=(2, 3))
            inputs = {"w": rng.normal(size=(3, 2)) * 0.5}

            def build(p, chain=chain, x=x):
                h = diffnum.matmul(x, p["w"])
                for fn in chain:
                    h = fn(h)
                return diffnum.sum_(h)

            worst = max(worst, _grad_check(build, inputs))
        assert worst < 1e-4


class TestErrors:
    """Construction and contract errors"""

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError) as excinfo:
            diffnum.add(np.ones((2, 3)), np.ones((4,)))
        assert "add" in excinfo.value.message
        assert "(2, 3)" in excinfo.value.message and "(4,)" in excinfo.value.message

    def test_matmul_inner_dimension(self):
        with pytest.raises(ShapeError):
            diffnum.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_scalar_root(self):
        tape = Tape()
        x = tape.param("x", np.ones(3))
        with pytest.raises(ContractError):
            tape.backward(x * 2.0)

    def test_root_from_other_tape(self):
        a, b = Tape(), Tape()
        x = b.param("x", np.array(1.0))
        with pytest.raises(ContractError):
            a.backward(diffnum.square(x))

    def test_duplicate_param_name(self):
        tape = Tape()
        tape.param("x", np.ones(2))
        with pytest.raises(ContractError):
            tape.param("x", np.ones(2))

    def test_rank_above_three_rejected(self):
        with pytest.raises(ShapeError):
            diffnum.exp(np.ones((1, 1, 1, 1)))
