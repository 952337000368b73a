import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from srctrace.nn import (
    AamHead,
    AdamState,
    ContractError,
    DegenerateInputError,
    DenseNet,
    Layer,
    OracleError,
    aam_loss,
    aam_loss_grad,
    adam_step,
    binary_ce,
    contrastive_loss,
    dumps_model,
    finite_difference_grad,
    forward,
    init_params,
    loads_model,
    net_from_dict,
    net_to_dict,
    softmax_ce,
    softmax_ce_grad,
)

finite = st.floats(-50, 50, allow_nan=False)


# ---------------------------------------------------------------- forward


def test_identity_layer_passes_input_through():
    net = DenseNet([Layer(np.eye(2), np.zeros(2), "identity")])
    assert forward(net, [1.0, 2.0]).tolist() == [1.0, 2.0]


def test_relu_layer_clamps_negatives():
    net = DenseNet([Layer(np.eye(2), np.zeros(2), "relu")])
    assert forward(net, [-1.0, 2.0]).tolist() == [0.0, 2.0]


def test_two_layer_net_matches_hand_matmul():
    w1 = np.array([[1.0, -2.0], [0.5, 1.0], [-1.0, 0.0]])
    b1 = np.array([0.1, -0.2, 0.3])
    w2 = np.array([[2.0, 1.0, -1.0]])
    b2 = np.array([0.5])
    net = DenseNet([Layer(w1, b1, "relu"), Layer(w2, b2, "identity")])
    x = np.array([0.4, -0.3])
    # hidden = relu([1.1, 0.2-0.2, -0.1]) = [1.1, 0, 0]
    assert forward(net, x)[0] == pytest.approx(2.0 * 1.1 + 0.5, abs=1e-15)


def test_forward_rejects_wrong_dimension():
    net = init_params([3, 2], seed=0)
    with pytest.raises(ContractError):
        forward(net, [1.0, 2.0])


def test_layer_chain_must_match():
    with pytest.raises(ContractError):
        DenseNet([Layer(np.ones((3, 2)), np.zeros(3)), Layer(np.ones((1, 4)), np.zeros(1))])


@given(arrays(np.float64, (4, 5), elements=finite))
def test_forward_is_pure(x):
    net = init_params([5, 7, 3], seed=11)
    assert np.array_equal(net.forward(x), net.forward(x))
    net.forward_train(x)
    assert np.array_equal(net.forward(x), net.forward(x))


# ---------------------------------------------------------------- init


def test_init_is_deterministic_and_bounded():
    a = init_params([20, 30, 10], seed=5)
    b = init_params([20, 30, 10], seed=5)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    for layer, (fi, fo) in zip(a.layers, [(20, 30), (30, 10)]):
        bound = math.sqrt(6.0 / (fi + fo))
        assert np.all(np.abs(layer.weight) <= bound)
        assert np.max(np.abs(layer.weight)) > 0.9 * bound
        assert not np.any(layer.bias)


def test_init_rejects_empty_dims():
    with pytest.raises(ContractError):
        init_params([], seed=0)
    with pytest.raises(ContractError):
        init_params([4], seed=0)


# ---------------------------------------------------------------- losses


def test_softmax_ce_examples():
    assert softmax_ce([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-15)
    assert softmax_ce([100.0, 0.0], 0) <= 1e-8
    expected = -3.0 + math.log(math.exp(1) + math.exp(2) + math.exp(3))
    assert softmax_ce([1.0, 2.0, 3.0], 2) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.40761, abs=1e-5)


def test_binary_ce_examples():
    assert binary_ce(0.0, True) == pytest.approx(math.log(2), abs=1e-15)
    assert binary_ce(20.0, True) < 1e-8
    assert binary_ce(-1.0, False) == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-15)
    assert binary_ce(-1.0, False) == pytest.approx(0.3133, abs=1e-4)


def test_binary_ce_is_stable_at_extremes():
    assert binary_ce(1000.0, False) == pytest.approx(1000.0)
    assert binary_ce(-1000.0, True) == pytest.approx(1000.0)
    assert binary_ce(-1000.0, False) == 0.0


def test_contrastive_examples():
    assert contrastive_loss(0.0, True, 1.0) == 0.0
    assert contrastive_loss(2.0, False, 1.0) == 0.0
    assert contrastive_loss(0.4, False, 1.0) == pytest.approx(0.36, abs=1e-15)
    assert contrastive_loss(0.5, True) == 0.25
    with pytest.raises(ContractError):
        contrastive_loss(-0.1, True)


def _two_class_head(scale, margin):
    return AamHead(np.array([[1.0, 0.0], [0.0, 1.0]]), scale, margin)


def test_aam_margin_free_closed_form():
    loss, logits = aam_loss(np.array([2.0, 0.0]), _two_class_head(1.0, 0.0), 0)
    cos_t = math.cos(math.acos(1.0 - 1e-7))  # aligned cosine sits at the clamp
    assert loss == pytest.approx(math.log1p(math.exp(-cos_t)), abs=1e-12)
    assert loss == pytest.approx(0.31326, abs=1e-5)


def test_aam_default_head_against_scalar_oracle():
    loss, logits = aam_loss(np.array([1.0, 0.0]), _two_class_head(30.0, 0.5), 0)
    cos_t = 1.0 - 1e-7  # clamped
    cos_n = 0.0
    target = 30.0 * math.cos(math.acos(cos_t) + 0.5)
    oracle = math.log1p(math.exp(30.0 * cos_n - target))
    assert loss == pytest.approx(oracle, abs=1e-12)
    assert logits[1] == 0.0


def test_aam_rejects_zero_embedding_and_bad_head():
    with pytest.raises(DegenerateInputError):
        aam_loss(np.zeros(2), _two_class_head(30.0, 0.5), 0)
    with pytest.raises(ContractError):
        AamHead(np.eye(2), scale=0.0)
    with pytest.raises(ContractError):
        AamHead(np.eye(2), margin=math.pi / 2)


def test_aam_head_rows_are_unit():
    head = AamHead.init(5, 8, seed=1)
    assert np.allclose(np.linalg.norm(head.class_weights, axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 2**31), st.floats(0.05, 1.2))
def test_aam_margin_never_lowers_loss_for_argmax_target(seed, margin):
    rng = np.random.default_rng(seed)
    head = AamHead(rng.standard_normal((4, 6)), 30.0, margin)
    e = rng.standard_normal(6)
    label = int(np.argmax(head.class_weights @ (e / np.linalg.norm(e))))
    with_margin, _ = aam_loss(e, head, label)
    plain, _ = aam_loss(e, AamHead(head.class_weights, 30.0, 0.0), label)
    assert with_margin >= plain - 1e-12


@given(st.integers(0, 2**31))
def test_losses_are_nonnegative(seed):
    rng = np.random.default_rng(seed)
    z = 10 * rng.standard_normal(5)
    assert softmax_ce(z, int(rng.integers(5))) >= 0
    assert binary_ce(float(z[0]), bool(z[1] > 0)) >= 0
    assert contrastive_loss(abs(float(z[2])), bool(z[3] > 0)) >= 0
    head = AamHead(rng.standard_normal((5, 5)))
    assert aam_loss(z, head, int(rng.integers(5)))[0] >= 0


# ---------------------------------------------------------------- backward


def test_backward_without_forward_is_a_contract_violation():
    net = init_params([3, 2], seed=0)
    with pytest.raises(ContractError):
        net.backward(np.ones((1, 2)))
    net.forward_train(np.ones((1, 3)))
    net.backward(np.ones((1, 2)))
    with pytest.raises(ContractError):
        net.backward(np.ones((1, 2)))


def test_linear_softmax_gradient_matches_hand_derivation(rng):
    net = DenseNet([Layer(rng.standard_normal((3, 4)), rng.standard_normal(3), "identity")])
    x = rng.standard_normal(4)
    y = 1
    logits = net.forward_train(x)
    _, dz = softmax_ce_grad(logits, [y])
    (gw, gb), _ = net.backward(dz)
    p = np.exp(logits[0] - logits[0].max())
    p /= p.sum()
    hand = p - np.eye(3)[y]
    assert np.allclose(gw, np.outer(hand, x), atol=1e-15)
    assert np.allclose(gb, hand, atol=1e-15)


def test_zero_weight_output_path_gives_zero_gradient():
    net = DenseNet([Layer(np.ones((3, 2)), np.zeros(3), "relu"), Layer(np.zeros((1, 3)), np.zeros(1))])
    net.forward_train(np.array([[1.0, 2.0]]))
    grads, gx = net.backward(np.zeros((1, 1)))
    assert all(not np.any(g) for g in grads)
    assert not np.any(gx)


def test_aam_batch_gradient_matches_finite_differences(rng):
    e = rng.standard_normal((4, 5))
    w = rng.standard_normal((3, 5))
    y = [0, 2, 1, 2]
    _, de, dw = aam_loss_grad(e, AamHead(w, 30.0, 0.5), y)
    numeric = finite_difference_grad(lambda p: aam_loss_grad(p[0], AamHead(p[1], 30.0, 0.5), y)[0],
                                     [e, AamHead(w).class_weights], 1e-6)
    assert np.allclose(de, numeric[0], atol=1e-6)
    assert np.allclose(dw, numeric[1], atol=1e-6)


# ---------------------------------------------------------------- finite differences


def test_finite_difference_examples():
    g = finite_difference_grad(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-4)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    assert not np.any(finite_difference_grad(lambda p: 4.2, [np.ones(3), np.ones((2, 2))])[1])


def test_finite_difference_rejects_nonfinite_and_bad_step():
    with pytest.raises(OracleError):
        finite_difference_grad(lambda x: float("nan"), np.array([1.0]))
    with pytest.raises(ContractError):
        finite_difference_grad(lambda x: 0.0, np.array([1.0]), 0.0)


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_is_fixed_point(rng):
    params = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
    state = AdamState(lr=0.1)
    out = params
    for _ in range(5):
        out = adam_step(out, [np.zeros((3, 2)), np.zeros(2)], state)
    assert all(np.array_equal(p, q) for p, q in zip(params, out))
    assert state.step == 5


@given(arrays(np.float64, 6, elements=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3)))
def test_adam_first_step_moves_each_coordinate_by_lr(g):
    state = AdamState(lr=1e-3)
    (out,) = adam_step([np.zeros(6)], [g], state)
    assert np.allclose(np.abs(out), 1e-3, rtol=1e-4)
    assert np.all(np.sign(out) == -np.sign(g))


def test_adam_two_steps_match_scalar_recurrence():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.7
    p = 1.5
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    state = AdamState(lr=lr)
    x = [np.array([1.5])]
    for _ in range(2):
        x = adam_step(x, [np.array([g])], state)
    assert x[0][0] == pytest.approx(p, abs=1e-15)


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        adam_step([np.zeros(3)], [np.zeros(2)], AdamState())
    with pytest.raises(ContractError):
        adam_step([np.zeros(3)], [], AdamState())


# ---------------------------------------------------------------- serialization


@given(st.integers(0, 2**31), st.lists(st.integers(1, 9), min_size=2, max_size=4))
def test_model_document_round_trip_is_exact(seed, dims):
    net = init_params(dims, seed)
    rng = np.random.default_rng(seed)
    net = net.with_parameters([p + rng.standard_normal(p.shape) * 1e-3 for p in net.parameters()])
    back = net_from_dict(loads_model(dumps_model("net", {"net": net_to_dict(net)}), "net")["net"])
    assert back.dims == net.dims and back.activations == net.activations
    assert all(np.array_equal(p, q) for p, q in zip(net.parameters(), back.parameters()))


def test_model_document_rejects_wrong_kind_and_version():
    text = dumps_model("mlp", {})
    with pytest.raises(ValueError):
        loads_model(text, "siamese")
    with pytest.raises(ValueError):
        loads_model(text.replace('"version": 1', '"version": 9'))
