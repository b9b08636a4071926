import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim.data import dirichlet_partition, make_blobs
from fedsim.local_engine import (
    ModifierKind,
    ObjectiveModifier,
    Schedule,
    StepKind,
    StepRule,
    clip_coefficients,
    local_step,
    modified_gradient,
    nar_coefficients,
    run_local,
    schedule_at,
)
from fedsim.models import Family, Model, init_params
from fedsim.numkit import RngStream, norm2

vec = arrays(
    np.float64,
    st.shared(st.integers(2, 8), key="dim"),
    elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
)


def small_fixture(seed=0, C=3, per_class=20, d=6, M=4):
    train, test = make_blobs(C, per_class, d, 5.0, 1.0, RngStream(seed))
    part = dirichlet_partition(train, M, 0.5, RngStream(seed))
    model = Model(Family.MLP_ONE_HIDDEN, d_in=d, n_classes=C, hidden=5)
    x0 = init_params(model, RngStream(seed))
    return train, part, model, x0


def test_schedule_examples():
    sched = Schedule(l0=0.01, rho=0.998, u0=0.01, gamma=0.998)
    l0, u0 = schedule_at(sched, 0)
    assert l0 == 0.01 and u0 == 0.01
    l1, _ = schedule_at(sched, 1)
    assert l1 == 0.01 * 0.998
    assert l1 == pytest.approx(0.00998, abs=1e-12)
    _, u5 = schedule_at(Schedule(u0=0.0), 5)
    assert u5 == 0.0
    with pytest.raises(ValueError):
        schedule_at(sched, -1)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(l0=0.0)
    with pytest.raises(ValueError):
        Schedule(rho=1.5)
    with pytest.raises(ValueError):
        Schedule(u0=-0.1)


def test_annealing_is_monotone():
    sched = Schedule(u0=0.05, gamma=0.99)
    us = [schedule_at(sched, t)[1] for t in range(50)]
    assert all(a > b for a, b in zip(us, us[1:]))  # strictly decreasing
    flat = Schedule(u0=0.05, gamma=1.0)
    assert schedule_at(flat, 7)[1] == 0.05


def test_nar_below_threshold_zero_decay():
    lam, mu, n, clipped = nar_coefficients(
        np.array([3.0, 4.0]), np.array([7.0, -2.0]), 0.01, 0.0, 10.0
    )
    assert (lam, mu, n, clipped) == (0.01, 0.0, 5.0, False)


def test_nar_clipped_pure_gradient():
    g = np.array([30.0, 40.0])
    x = np.zeros(2)
    lam, mu, n, clipped = nar_coefficients(g, x, 1.0, 0.1, 10.0)
    assert clipped and n == 50.0
    assert lam == pytest.approx(0.2, abs=1e-15)
    assert mu == pytest.approx(0.02, abs=1e-15)
    assert norm2(lam * g + mu * x) == pytest.approx(10.0, abs=1e-12)  # = l_t * A


def test_nar_clipped_pure_decay():
    g = np.zeros(2)
    x = np.array([100.0, 0.0])
    lam, mu, n, clipped = nar_coefficients(g, x, 0.01, 0.01, 10.0)
    assert clipped and n == 100.0
    assert lam == pytest.approx(0.001) and mu == pytest.approx(0.001)
    assert norm2(lam * g + mu * x) == pytest.approx(0.1, abs=1e-15)


def test_clip_examples():
    g = np.array([30.0, 40.0])
    lam, mu, n, clipped = clip_coefficients(g, 1.0, 0.1, 10.0)
    assert clipped and n == 50.0
    assert lam == pytest.approx(0.2)
    assert mu == 0.1  # decay NOT rescaled: the contrast with co-clipping
    lam, mu, n, clipped = clip_coefficients(np.array([3.0, 4.0]), 1.0, 0.1, 10.0)
    assert (lam, mu, n, clipped) == (1.0, 0.1, 5.0, False)


@given(vec, vec, st.floats(1e-3, 1.0), st.floats(1e-4, 0.5), st.floats(0.5, 20))
@settings(max_examples=120, deadline=None)
def test_nar_step_bound_and_joint_ratio(g, x, l_t, u_t, A):
    lam, mu, n, clipped = nar_coefficients(g, x, l_t, u_t, A)
    assert norm2(lam * g + mu * x) <= l_t * A + 1e-12
    assert mu / lam == pytest.approx(u_t / l_t, rel=1e-12, abs=1e-12)
    assert lam <= l_t and mu <= u_t
    assert clipped == (n > A)


@given(vec, vec, st.floats(1e-3, 1.0), st.floats(0.5, 20))
@settings(max_examples=60, deadline=None)
def test_nar_equals_clip_at_zero_decay(g, x, l_t, A):
    assert nar_coefficients(g, x, l_t, 0.0, A) == clip_coefficients(g, l_t, 0.0, A)


def test_local_step_examples():
    out = local_step(np.array([1.0, 1.0]), np.array([1.0, 0.0]), 0.1, 0.01)
    assert np.array_equal(out, [0.89, 0.99])
    x = np.array([2.0, -3.0])
    assert np.array_equal(local_step(x, np.ones(2), 0.0, 0.0), x)
    assert np.array_equal(local_step(x, np.zeros(2), 0.0, 1.0), np.zeros(2))


def test_modified_gradient_variants():
    g = np.array([1.0, 0.0])
    x = np.array([3.0, 0.0])
    x0 = np.array([1.0, 0.0])
    none = ObjectiveModifier(ModifierKind.NONE)
    assert modified_gradient(none, g, x, x0) is g
    prox = ObjectiveModifier(ModifierKind.PROX, prox_mu=0.5)
    assert np.array_equal(modified_gradient(prox, g, x, x0), [2.0, 0.0])
    scaf = ObjectiveModifier(
        ModifierKind.SCAFFOLD,
        c_i=np.array([0.5, 0.0]),
        c=np.array([0.2, 0.0]),
    )
    out = modified_gradient(scaf, g, x, x0)
    assert out[0] == pytest.approx(0.7) and out[1] == 0.0
    with pytest.raises(ValueError):
        modified_gradient(ObjectiveModifier(ModifierKind.SCAFFOLD), g, x, x0)


def test_run_local_single_plain_step_is_sgd():
    train, part, model, x0 = small_fixture()
    sched = Schedule(l0=0.05, rho=1.0, u0=0.0, gamma=1.0)
    round_rng = RngStream(0).child(0)
    delta, trace = run_local(
        model, train, part.shards[0], x0, 0, 1,
        StepRule(StepKind.PLAIN_WD), sched, ObjectiveModifier(ModifierKind.NONE),
        8, round_rng,
    )
    # One plain zero-decay step leaves x0 - 0.05*g, so delta reproduces
    # x0 - (x0 - 0.05*g) bit for bit (not 0.05*g itself: subtraction
    # re-rounds).
    assert np.array_equal(delta, x0 - (x0 - 0.05 * trace.grads[0]))
    assert np.allclose(delta, 0.05 * trace.grads[0], rtol=1e-12, atol=1e-15)
    assert trace.lambdas[0] == 0.05 and trace.mus[0] == 0.0
    assert trace.cond1_violations == 0


def test_run_local_pure_decay_closed_form():
    # Zero features and zero targets make every gradient identically zero
    # (at zero bias), so two steps shrink x by (1 - u)^2 exactly.
    feats = np.zeros((6, 3))
    labels = np.zeros(6, dtype=np.int64)
    from fedsim.data import ClientShard, Dataset, Split

    ds = Dataset(feats, labels, 1, Split.TRAIN)
    shard = ClientShard(0, np.arange(6), np.array([1.0]))
    model = Model(Family.LINEAR_REGRESSION, d_in=3)
    x0 = np.array([2.0, -1.0, 0.5, 0.0])  # bias 0 keeps the residual at 0
    u = 0.03
    sched = Schedule(l0=0.1, rho=1.0, u0=u, gamma=1.0)
    delta, trace = run_local(
        model, ds, shard, x0, 0, 2,
        StepRule(StepKind.PLAIN_WD), sched, ObjectiveModifier(ModifierKind.NONE),
        4, RngStream(0).child(0),
    )
    expected = (1.0 - (1.0 - u) ** 2) * x0
    assert np.max(np.abs(delta - expected)) < 1e-12
    assert np.all(trace.grads == 0.0)


def test_run_local_replay_determinism():
    train, part, model, x0 = small_fixture()
    sched = Schedule()
    args = (
        model, train, part.shards[1], x0, 3, 4,
        StepRule(StepKind.FEDNAR), sched, ObjectiveModifier(ModifierKind.NONE),
        8,
    )
    d1, t1 = run_local(*args, RngStream(0).child(3))
    d2, t2 = run_local(*args, RngStream(0).child(3))
    assert np.array_equal(d1, d2)
    assert np.array_equal(t1.grads, t2.grads)
    assert np.array_equal(t1.lambdas, t2.lambdas)


def test_run_local_trace_invariants_and_step_bound():
    train, part, model, x0 = small_fixture(seed=2)
    sched = Schedule(l0=0.05, u0=0.1)
    rule = StepRule(StepKind.FEDNAR, max_norm=0.5)  # small cap: force clipping
    delta, trace = run_local(
        model, train, part.shards[0], x0, 0, 6,
        rule, sched, ObjectiveModifier(ModifierKind.NONE), 8,
        RngStream(2).child(0),
    )
    l_t, u_t = schedule_at(sched, 0)
    assert np.all(trace.lambdas <= l_t) and np.all(trace.mus <= u_t)
    assert np.any(trace.clipped)
    assert np.all(trace.step_norms <= l_t * rule.max_norm + 1e-12)
    unclipped = ~trace.clipped
    assert np.all(trace.lambdas[unclipped] == l_t)
    assert np.all(trace.mus[unclipped] == u_t)


def test_run_local_zero_decay_rules_coincide_bitwise():
    train, part, model, x0 = small_fixture(seed=4)
    sched = Schedule(u0=0.0)
    rng_path = RngStream(4).child(0)
    mods = ObjectiveModifier(ModifierKind.NONE)
    d_nar, t_nar = run_local(
        model, train, part.shards[2], x0, 0, 5,
        StepRule(StepKind.FEDNAR, 1.0), sched, mods, 8, rng_path,
    )
    d_clip, t_clip = run_local(
        model, train, part.shards[2], x0, 0, 5,
        StepRule(StepKind.GRADCLIP_WD, 1.0), sched, mods, 8, rng_path,
    )
    assert np.array_equal(d_nar, d_clip)
    assert np.array_equal(t_nar.lambdas, t_clip.lambdas)
    assert np.array_equal(t_nar.mus, t_clip.mus)
    assert np.array_equal(t_nar.clipped, t_clip.clipped)


def test_run_local_unclipped_equals_plain_rule():
    train, part, model, x0 = small_fixture(seed=5)
    sched = Schedule(l0=0.01, u0=0.01)
    mods = ObjectiveModifier(ModifierKind.NONE)
    rng_path = RngStream(5).child(0)
    d_nar, t_nar = run_local(
        model, train, part.shards[0], x0, 0, 4,
        StepRule(StepKind.FEDNAR, 1e6), sched, mods, 8, rng_path,
    )
    d_plain, _ = run_local(
        model, train, part.shards[0], x0, 0, 4,
        StepRule(StepKind.PLAIN_WD), sched, mods, 8, rng_path,
    )
    assert not np.any(t_nar.clipped)
    assert np.array_equal(d_nar, d_plain)


def test_run_local_records_iterates_when_asked():
    train, part, model, x0 = small_fixture(seed=6)
    delta, trace = run_local(
        model, train, part.shards[0], x0, 0, 3,
        StepRule(StepKind.FEDNAR), Schedule(), ObjectiveModifier(ModifierKind.NONE),
        4, RngStream(6).child(0), record_iterates=True,
    )
    assert trace.iterates is not None and len(trace.iterates) == 3
    assert np.array_equal(trace.iterates[0], x0)


def test_step_rule_validation():
    with pytest.raises(ValueError):
        StepRule(StepKind.FEDNAR, max_norm=0.0)
    StepRule(StepKind.PLAIN_WD, max_norm=0.0)  # threshold unused: allowed
