import math

import numpy as np
import pytest

from deskbot import nn, policy
from deskbot.featurize import ActionLabel, OPEN_LOOP_H
from deskbot.nn import rng_stream

OBS_DIM, Z_DIM = 7, 5


def small_net(seed=0, **kw):
    defaults = dict(torso_widths=(10, 8), head_widths=(6,))
    defaults.update(kw)
    return policy.init_policy(rng_stream(seed, "test-policy"), OBS_DIM, Z_DIM, **defaults)


def unit_z(seed=0):
    return nn.l2_normalize(rng_stream(seed, "test-z").normal(size=Z_DIM))


def random_label(rng, masked_after=None):
    ol = np.zeros((OPEN_LOOP_H, 4))
    mask = np.zeros(OPEN_LOOP_H, dtype=bool)
    n_valid = OPEN_LOOP_H if masked_after is None else masked_after
    for k in range(n_valid):
        ol[k] = (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                 rng.uniform(-0.2, 0.2), rng.uniform(0.1, 0.9))
        mask[k] = True
    return ActionLabel(obs=rng.uniform(-1, 1, OBS_DIM),
                       d_pos=rng.uniform(-0.05, 0.05, 2),
                       d_rot=float(rng.uniform(-0.2, 0.2)),
                       grip_target=float(rng.uniform(0.1, 0.9)),
                       horizon_n=1, open_loop=ol, open_loop_mask=mask)


def make_batch(seed, n, masked_after=None):
    rng = rng_stream(seed, "test-batch")
    labels = [random_label(rng, masked_after) for _ in range(n)]
    zs = nn.l2_normalize(rng.normal(size=(n, Z_DIM)))
    return policy.LabelBatch.from_labels(labels, zs), labels, zs


def test_zero_final_layers_neutral_outputs():
    net = small_net()
    for name in ("pos", "rot", "grip"):
        net.heads[name][-1].W[...] = 0.0
        net.heads[name][-1].b[...] = 0.0
    pred = policy.policy_forward(net, np.zeros(OBS_DIM) + 0.3, unit_z())
    assert np.allclose(pred.d_pos, 0.0)
    assert pred.d_rot == 0.0
    assert pred.grip_p == 0.5


def test_forward_deterministic():
    net = small_net()
    obs, z = np.linspace(-1, 1, OBS_DIM), unit_z()
    p1 = policy.policy_forward(net, obs, z)
    p2 = policy.policy_forward(net, obs, z)
    assert np.array_equal(p1.d_pos, p2.d_pos)
    assert p1.d_rot == p2.d_rot and p1.grip_p == p2.grip_p
    assert np.array_equal(p1.open_loop, p2.open_loop)


def test_distinct_z_changes_outputs():
    net = small_net()
    obs = np.linspace(-1, 1, OBS_DIM)
    p1 = policy.policy_forward(net, obs, unit_z(1))
    p2 = policy.policy_forward(net, obs, unit_z(2))
    assert not np.allclose(p1.d_pos, p2.d_pos)


def test_forward_dimension_errors():
    net = small_net()
    with pytest.raises(nn.NumericError):
        policy.policy_forward(net, np.zeros(OBS_DIM + 1), unit_z())
    with pytest.raises(nn.NumericError):
        policy.policy_forward(net, np.zeros(OBS_DIM), np.ones(Z_DIM + 2))


def test_grip_output_in_unit_interval():
    net = small_net(3)
    rng = rng_stream(4, "probe")
    for _ in range(20):
        pred = policy.policy_forward(net, rng.normal(size=OBS_DIM), unit_z(5))
        assert 0.0 < pred.grip_p < 1.0
        assert np.all(pred.open_loop[:, 3] > 0.0) and np.all(pred.open_loop[:, 3] < 1.0)


def test_loss_perfect_prediction_is_tiny():
    rng = rng_stream(6, "perfect")
    lab = random_label(rng)
    lab = ActionLabel(obs=lab.obs, d_pos=lab.d_pos, d_rot=lab.d_rot, grip_target=1.0,
                      horizon_n=1, open_loop=lab.open_loop,
                      open_loop_mask=np.zeros(OPEN_LOOP_H, dtype=bool))
    pred = policy.PredictedAction(d_pos=lab.d_pos.copy(), d_rot=lab.d_rot,
                                  grip_p=1.0 - 1e-7, open_loop=np.zeros((OPEN_LOOP_H, 4)))
    assert policy.policy_loss(pred, lab) <= 1e-6


def test_loss_position_error_value():
    # quadratic branch: 100 * 0.5 * (0.1^2) = 0.5; gripper matched to kill bce
    lab = ActionLabel(obs=np.zeros(OBS_DIM), d_pos=np.zeros(2), d_rot=0.0,
                      grip_target=1.0, horizon_n=1,
                      open_loop=np.zeros((OPEN_LOOP_H, 4)),
                      open_loop_mask=np.zeros(OPEN_LOOP_H, dtype=bool))
    pred = policy.PredictedAction(d_pos=np.array([0.1, 0.0]), d_rot=0.0,
                                  grip_p=1.0 - 1e-7, open_loop=np.zeros((OPEN_LOOP_H, 4)))
    assert math.isclose(policy.policy_loss(pred, lab), 0.5, abs_tol=1e-5)


def test_loss_all_slots_masked_equals_primary():
    rng = rng_stream(7, "masked")
    lab = random_label(rng, masked_after=0)
    pred = policy.PredictedAction(d_pos=np.zeros(2), d_rot=0.0, grip_p=0.5,
                                  open_loop=rng.normal(size=(OPEN_LOOP_H, 4)))
    with_aux = policy.policy_loss(pred, lab, aux_weight=1.0)
    no_aux = policy.policy_loss(pred, lab, aux_weight=0.0)
    assert with_aux == no_aux


def test_scalar_and_batched_losses_agree():
    net = small_net(8)
    batch, labels, zs = make_batch(9, 4, masked_after=3)
    loss_b, _, _ = policy.loss_and_grads(net, batch)
    per_example = []
    for lab, z in zip(labels, zs):
        pred = policy.policy_forward(net, lab.obs, z)
        per_example.append(policy.policy_loss(pred, lab))
    assert math.isclose(loss_b, np.mean(per_example), rel_tol=1e-12)


def nudged_batch(seed, net, n=3):
    # finite differences need samples away from relu kinks
    for k in range(50):
        batch, _, _ = make_batch(seed * 1000 + k, n, masked_after=4)
        if policy.preactivation_margin(net, batch.obs, batch.z) > 1e-4:
            return batch
    raise AssertionError("could not find a kink-free batch")


def test_grad_check_composite_loss():
    net = small_net(10)
    batch = nudged_batch(11, net)

    def fn():
        loss, grads, _ = policy.loss_and_grads(net, batch)
        return loss, grads

    err = nn.grad_check(fn, net.params(), max_coords_per_param=6,
                        rng=np.random.default_rng(0))
    assert err < 1e-4


def test_grad_check_embedding_gradient():
    net = small_net(12)
    batch = nudged_batch(13, net)

    def fn():
        loss, _, dz = policy.loss_and_grads(net, batch)
        return loss, {"z": dz}

    err = nn.grad_check(fn, {"z": batch.z}, max_coords_per_param=8,
                        rng=np.random.default_rng(1))
    assert err < 1e-4


def test_train_step_deterministic_with_zero_noise():
    net1, net2 = small_net(14), small_net(14)
    batch, _, _ = make_batch(15, 6)
    a1, a2 = nn.AdamState(lr=1e-3), nn.AdamState(lr=1e-3)
    l1 = policy.train_step(net1, a1, batch, rng_stream(0, "n1"), noise_sigma=0.0)
    l2 = policy.train_step(net2, a2, batch, rng_stream(1, "n2"), noise_sigma=0.0)
    assert l1 == l2
    for (k1, v1), (k2, v2) in zip(sorted(net1.params().items()),
                                  sorted(net2.params().items())):
        assert k1 == k2 and np.array_equal(v1, v2)


def test_embedding_noise_magnitude():
    # E ||z' - z||^2 = sigma^2 * D for per-component gaussian noise
    rng = rng_stream(16, "noise")
    D, sigma, n = 16, 0.1, 10_000
    draws = rng.normal(0.0, sigma, size=(n, D))
    mean_sq = float(np.mean(np.sum(draws ** 2, axis=1)))
    assert abs(mean_sq - sigma ** 2 * D) / (sigma ** 2 * D) < 0.05


def test_training_reduces_loss_on_synthetic_task():
    net = small_net(17, torso_widths=(32, 32), head_widths=(16,))
    rng = rng_stream(18, "synthetic")
    labels = []
    for _ in range(64):
        base = random_label(rng, masked_after=2)
        labels.append(ActionLabel(obs=base.obs, d_pos=np.array([0.02, -0.01]),
                                  d_rot=0.05, grip_target=1.0, horizon_n=1,
                                  open_loop=base.open_loop,
                                  open_loop_mask=base.open_loop_mask))
    z = nn.l2_normalize(rng.normal(size=Z_DIM))
    batch = policy.LabelBatch.from_labels(labels, np.tile(z, (64, 1)))
    adam = nn.AdamState(lr=1e-3)
    first = policy.loss_and_grads(net, batch)[0]
    train_rng = rng_stream(19, "train")
    for _ in range(200):
        policy.train_step(net, adam, batch, train_rng, noise_sigma=0.0)
    final = policy.loss_and_grads(net, batch)[0]
    assert final < 0.2 * first


def test_act_clamps_and_is_pure():
    net = small_net(20)
    # blow up the position head so raw outputs exceed the clamp
    net.heads["pos"][-1].b[...] = np.array([5.0, -5.0])
    obs, z = np.linspace(-1, 1, OBS_DIM), unit_z(21)
    before = {k: v.copy() for k, v in net.params().items()}
    action = policy.act(net, obs, z)
    assert action.dx == 0.05 and action.dy == -0.05
    assert abs(action.dtheta) <= 0.2
    assert 0.0 < action.gripper_target < 1.0
    for k, v in net.params().items():
        assert np.array_equal(v, before[k])


def test_act_grip_passthrough():
    net = small_net(22)
    obs, z = np.linspace(-1, 1, OBS_DIM), unit_z(23)
    pred = policy.policy_forward(net, obs, z)
    action = policy.act(net, obs, z)
    assert action.gripper_target == pred.grip_p
    assert math.isclose(action.dx, float(np.clip(pred.d_pos[0], -0.05, 0.05)))


def test_non_finite_forward_rejected():
    net = small_net(24)
    net.torso[0].W[0, 0] = 1e308
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(nn.NumericError):
            policy.policy_forward(net, np.full(OBS_DIM, 1e10), unit_z(25))


def test_checkpoint_round_trip(tmp_path):
    net = small_net(26)
    adam = nn.AdamState(lr=2e-3)
    batch, _, _ = make_batch(27, 4)
    policy.train_step(net, adam, batch, rng_stream(28, "t"), noise_sigma=0.0)
    path = str(tmp_path / "p.ckpt")
    policy.save_policy(path, net, adam, extra_meta={"steps": 1})
    net2, adam2, meta = policy.load_policy(path)
    assert meta["steps"] == 1
    for (k1, v1), (k2, v2) in zip(sorted(net.params().items()),
                                  sorted(net2.params().items())):
        assert k1 == k2 and np.array_equal(v1, v2)
    assert adam2.step_count == adam.step_count and adam2.lr == adam.lr
    for k in adam.m:
        assert np.array_equal(adam.m[k], adam2.m[k])
    obs, z = np.linspace(-1, 1, OBS_DIM), unit_z(29)
    p1, p2 = policy.policy_forward(net, obs, z), policy.policy_forward(net2, obs, z)
    assert np.array_equal(p1.d_pos, p2.d_pos) and p1.grip_p == p2.grip_p
    # determinism: identical save bytes
    path2 = str(tmp_path / "q.ckpt")
    policy.save_policy(path2, net2, adam2, extra_meta={"steps": 1})
    assert open(path, "rb").read() == open(path2, "rb").read()
