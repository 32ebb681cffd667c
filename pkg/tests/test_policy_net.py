import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comp_vr.policy_net import (OUTPUT_CLAMP, ExplorationSchedule, PolicyNet, ReplayMemory, adam_update,
                                backward_and_adam, explore, forward, gradients, init_xavier, load_checkpoint,
                                loss, net_from_dict, net_to_dict, save_checkpoint)


def finite_difference(net: PolicyNet, x: np.ndarray, a: np.ndarray, h: float = 1e-6) -> list[np.ndarray]:
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss(forward(net, x), a)
            p[idx] = old - h
            down = loss(forward(net, x), a)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_xavier_bound_and_zero_bias():
    net = init_xavier([3, 3], np.random.default_rng(0))
    assert np.all(np.abs(net.weights[0]) <= 1.0)
    assert np.array_equal(net.biases[0], np.zeros(3))
    big = init_xavier([3, 3], np.random.default_rng(1))
    assert np.max(np.abs(big.weights[0])) > 0.5


def test_xavier_deterministic():
    a = init_xavier([10, 120, 80, 4], np.random.default_rng(5))
    b = init_xavier([10, 120, 80, 4], np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))
    assert a.sizes == [10, 120, 80, 4]


def test_zero_params_give_half():
    net = init_xavier([4, 6, 5, 3], np.random.default_rng(0))
    for p in net.params:
        p[...] = 0.0
    assert np.array_equal(forward(net, np.arange(4.0)), np.full(3, 0.5))


def test_toy_net_hand_composition():
    net = PolicyNet([np.array([[1.5], [-2.0]]), np.array([[0.7, 0.4]])], [np.array([0.1, 0.3]), np.array([-0.2])])
    x = 0.8
    h = [max(1.5 * x + 0.1, 0), max(-2.0 * x + 0.3, 0)]
    want = 1 / (1 + math.exp(-(0.7 * h[0] + 0.4 * h[1] - 0.2)))
    assert forward(net, np.array([x]))[0] == pytest.approx(want, rel=1e-14)


def test_dim_mismatch_raises():
    net = init_xavier([4, 3], np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(net, np.zeros(5))


@given(x=st.lists(st.floats(-1e6, 1e6), min_size=5, max_size=5))
@settings(max_examples=50)
def test_outputs_strictly_inside(x):
    net = init_xavier([5, 8, 3], np.random.default_rng(0))
    out = forward(net, np.array(x))
    assert np.all((out > 0) & (out < 1))
    assert math.isfinite(loss(out, np.array([0, 1, 1])))


def test_loss_at_half_is_log2():
    assert loss(np.full((2, 5), 0.5), np.array([[0, 1, 0, 1, 1], [1, 1, 1, 0, 0]])) == pytest.approx(5 * math.log(2))


def test_loss_vanishes_at_labels():
    a = np.array([[1, 0, 1]])
    assert 0 <= loss(np.clip(a, OUTPUT_CLAMP, 1 - OUTPUT_CLAMP), a) < 1e-5


def test_gradient_check_toy_net():
    rng = np.random.default_rng(0)
    net = init_xavier([1, 2, 1], rng)
    net.biases[0][:] = [0.3, 0.2]          # keep the hidden units away from the ReLU kink
    assert net.n_params() == 7        # W1, b1, W2 hold 2 each; b2 holds 1
    x, a = rng.standard_normal((4, 1)), rng.integers(0, 2, (4, 1))
    _, analytic = gradients(net, x, a)
    numeric = finite_difference(net, x, a)
    for g, n in zip(analytic, numeric):
        assert np.linalg.norm(g - n) <= 1e-4 * max(np.linalg.norm(n), 1e-8)


@given(seed=st.integers(0, 2 ** 31))
@settings(max_examples=15, deadline=None)
def test_gradient_check_every_layer(seed):
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 4))]
    net = init_xavier(sizes, rng)
    for b in net.biases:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    x = rng.standard_normal((3, sizes[0]))
    a = rng.integers(0, 2, (3, sizes[-1]))
    _, analytic = gradients(net, x, a)
    numeric = finite_difference(net, x, a)
    for g, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(n), np.linalg.norm(g))
        if scale < 1e-9:
            continue
        assert np.linalg.norm(g - n) <= 1e-4 * scale


def test_zero_gradient_keeps_params():
    net = init_xavier([3, 4, 2], np.random.default_rng(0), learning_rate=0.1)
    before = [p.copy() for p in net.params]
    adam_update(net, [np.zeros_like(p) for p in net.params])
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))


def test_first_adam_step_moves_by_lr():
    net = init_xavier([2, 2], np.random.default_rng(0), learning_rate=0.1)
    before = net.weights[0].copy()
    grads = [np.full((2, 2), 3.0), np.zeros(2)]
    adam_update(net, grads)
    # bias-corrected first step is lr * sign(g)
    assert np.allclose(before - net.weights[0], 0.1, rtol=0, atol=1e-8)


def test_training_reduces_loss_and_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        net = init_xavier([4, 16, 8, 3], rng, learning_rate=0.01)
        x = rng.standard_normal((64, 4))
        a = (x[:, :3] > 0).astype(int)
        first = backward_and_adam(net, x, a)
        for _ in range(200):
            last = backward_and_adam(net, x, a)
        return first, last, net
    f1, l1, n1 = run()
    f2, l2, n2 = run()
    assert l1 < 0.5 * f1
    assert all(np.array_equal(p, q) for p, q in zip(n1.params, n2.params))


def test_explore_identity_and_reproducible():
    p = np.array([0.2, 0.9])
    assert np.array_equal(explore(p, 0.0, 0.36, np.random.default_rng(0)), p)
    a = explore(p, 0.99, 0.36, np.random.default_rng(4))
    b = explore(p, 0.99, 0.36, np.random.default_rng(4))
    assert np.array_equal(a, b)
    assert np.all((a >= OUTPUT_CLAMP) & (a <= 1 - OUTPUT_CLAMP))


def test_schedule_decays_to_floor():
    s = ExplorationSchedule()
    assert s.epsilon == 0.99
    values = []
    for _ in range(10000):
        values.append(s.epsilon)
        s.advance()
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert s.epsilon == 0.01


def test_replay_fifo_overwrite():
    mem = ReplayMemory(3)
    for k in range(5):
        mem.push(np.array([k]), np.array([k]), np.array([k + 1]))
    assert len(mem) == 3
    assert [int(s[0]) for s, _, _ in mem.ordered()] == [2, 3, 4]


def test_replay_sample_distinct_and_insufficient():
    mem = ReplayMemory(100)
    rng = np.random.default_rng(0)
    assert mem.sample(4, rng) is None
    for k in range(10):
        mem.push(np.array([k]), np.array([k % 2]), np.array([k]))
    states, actions = mem.sample(10, rng)
    assert sorted(states[:, 0].tolist()) == list(range(10))


def test_checkpoint_round_trip(tmp_path):
    net = init_xavier([3, 5, 2], np.random.default_rng(0))
    backward_and_adam(net, np.ones((2, 3)), np.array([[1, 0], [0, 1]]))
    sched = ExplorationSchedule(t=17)
    save_checkpoint(tmp_path / "net.json", net, sched)
    back, s2 = load_checkpoint(tmp_path / "net.json")
    assert back.step == 1 and s2.t == 17
    assert all(np.array_equal(p, q) for p, q in zip(net.params + net.m + net.v, back.params + back.m + back.v))


def test_checkpoint_rejects_unknown_format():
    d = net_to_dict(init_xavier([2, 2], np.random.default_rng(0)))
    d["format"] = "other/9"
    with pytest.raises(ValueError):
        net_from_dict(d)
