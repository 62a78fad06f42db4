import math

import numpy as np
import pytest

from roma.errors import ContractError, NumericError, ShapeError
from roma.numerics import (
    ParamRegistry, Tape, Tensor, add, backward, finite_difference_check, layer_norm, linear, matmul, mean_all,
    mse, mul, no_tape, replay, scale, slice_axis, softmax_rows, square, sum_all,
)
from roma.numerics.gradcheck import FULL_CHECK_LIMIT, SAMPLED_INDICES


def taped(fn, *tensors):
    with Tape() as tape:
        out = fn(*tensors)
    backward(out, tape)
    return out


def test_matmul_identity_and_hand_values():
    col = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), col).data, [[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), col).data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_grad_is_column_sums_of_b():
    rng = np.random.default_rng(0)
    A = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    B = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    taped(lambda a, b: sum_all(matmul(a, b)), A, B)
    expected = np.tile(B.data.sum(axis=1), (3, 1))
    np.testing.assert_allclose(A.grad, expected, rtol=0, atol=1e-12)

    P = ParamRegistry()
    P.add("A", A.data)
    rep = finite_difference_check(lambda: sum_all(matmul(P["A"], Tensor(B.data))), P)
    assert rep.max_rel < 1e-8


def test_softmax_rows_closed_forms():
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], atol=1e-15)
    x = np.random.default_rng(1).normal(size=(4, 7))
    a = softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(a, softmax_rows(Tensor(x + 123.4)).data, atol=1e-14)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[0.0, np.nan]]))


def test_softmax_mask_gives_zero_row_when_nothing_allowed():
    mask = np.array([[False, False], [True, False]])
    out = softmax_rows(Tensor(np.ones((2, 2))), mask).data
    np.testing.assert_array_equal(out, [[0.0, 0.0], [1.0, 0.0]])


def test_layer_norm_cases():
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_array_equal(layer_norm(Tensor([[3.0, 3.0]]), g, b).data, [[0.0, 0.0]])
    np.testing.assert_allclose(layer_norm(Tensor([[1.0, -1.0]]), g, b, eps=0.0).data, [[1.0, -1.0]])
    x = np.random.default_rng(2).normal(size=(5, 6))
    g6, b6 = Tensor(np.ones(6)), Tensor(np.zeros(6))
    out = layer_norm(Tensor(x), g6, b6).data
    np.testing.assert_allclose(out, layer_norm(Tensor(x + 7.0), g6, b6).data, atol=1e-12)
    assert np.abs(out.mean(axis=1)).max() < 1e-10


def test_layer_norm_zero_width_is_shape_error():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


def test_backward_square_and_unused_param():
    P = ParamRegistry()
    x = P.add("x", np.array(3.0))
    P.add("unused", np.ones(3))
    with Tape() as tape:
        y = square(x)
    backward(y, tape, P)
    assert x.grad == pytest.approx(6.0)
    np.testing.assert_array_equal(P["unused"].grad, np.zeros(3))


def test_backward_needs_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with no_tape():
            sum_all(x)
    assert len(tape) == 0


def test_tensor_validate_flags_non_finite():
    with pytest.raises(NumericError):
        Tensor([1.0, np.inf]).validate()


def test_registry_iterates_lexicographically_and_rejects_duplicates():
    P = ParamRegistry()
    for name in ("b", "a", "c"):
        P.add(name, np.zeros(1))
    assert [n for n, _ in P.items()] == ["a", "b", "c"]
    with pytest.raises(ContractError):
        P.add("a", np.zeros(1))


def test_load_state_checks_before_writing():
    P = ParamRegistry()
    P.add("a", np.zeros(2))
    P.add("b", np.zeros(3))
    with pytest.raises(ShapeError, match="'b'"):
        P.load_state({"a": np.ones(2), "b": np.ones(4)})
    np.testing.assert_array_equal(P["a"].data, np.zeros(2))


def test_half_squared_norm_check_is_exact():
    P = ParamRegistry()
    P.add("p", np.random.default_rng(3).normal(size=10))
    rep = finite_difference_check(lambda: scale(sum_all(square(P["p"])), 0.5), P)
    assert rep.max_rel < 1e-9


def test_check_reports_a_doubled_gradient():
    rng = np.random.default_rng(4)
    P = ParamRegistry()
    P.add("w", rng.normal(size=(3, 2)))
    P.add("v", rng.normal(size=2))
    x = Tensor(rng.normal(size=(4, 3)))

    def f():
        return mean_all(square(add(linear(x, P["w"]), Tensor(np.zeros((4, 2))))))

    from roma.numerics import analytic_grads
    grads = analytic_grads(f, P)
    grads["w"] = grads["w"] * 2.0
    rep = finite_difference_check(f, P, analytic=grads)
    assert rep.failing(1e-4) == ["w"]


def test_large_tensors_are_subsampled():
    P = ParamRegistry()
    P.add("big", np.random.default_rng(5).normal(size=FULL_CHECK_LIMIT + 1))
    rep = finite_difference_check(lambda: sum_all(square(P["big"])), P)
    assert rep.params["big"].checked == SAMPLED_INDICES
    assert rep.max_rel < 1e-4


def test_non_finite_objective_is_numeric_error():
    P = ParamRegistry()
    P.add("p", np.array([1.0]))
    with pytest.raises(NumericError):
        finite_difference_check(lambda: scale(sum_all(P["p"]), np.inf), P)


def test_incremental_replay_matches_full_check():
    rng = np.random.default_rng(6)
    P = ParamRegistry()
    P.add("w1", rng.normal(size=(4, 5)))
    P.add("w2", rng.normal(size=(5, 3)))
    x = Tensor(rng.normal(size=(6, 4)))
    t = Tensor(rng.normal(size=(6, 3)))

    def f():
        h = softmax_rows(linear(x, P["w1"]))
        return mse(linear(h, P["w2"]), t)

    full = finite_difference_check(f, P)
    inc = finite_difference_check(f, P, incremental=True)
    for name in full.params:
        assert inc.params[name].max_rel == pytest.approx(full.params[name].max_rel, rel=1e-6, abs=1e-12)


def test_replay_reproduces_the_forward_value():
    rng = np.random.default_rng(7)
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 3)))
    with Tape() as tape:
        out = sum_all(mul(linear(x, w), slice_axis(linear(x, w), 1, 0, 3)))
    assert replay(tape, out, {}) == out.item()
    w2 = Tensor(w.data + 0.1)
    with no_tape():
        expect = sum_all(mul(linear(x, w2), slice_axis(linear(x, w2), 1, 0, 3))).item()
    assert replay(tape, out, {id(w): w2}) == pytest.approx(expect, rel=1e-15)


def test_gradients_are_bitwise_reproducible():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(5, 4))

    def grads():
        w = Tensor(data, requires_grad=True)
        taped(lambda a: sum_all(square(softmax_rows(a))), w)
        return w.grad

    assert np.array_equal(grads(), grads())
