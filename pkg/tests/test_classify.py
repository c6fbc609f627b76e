import numpy as np
import pytest

import halfstrip as hs

from conftest import random_pos_recurrent_model, scalar_chain


def _dense_return_time(model, cutoff, n, mu):
    """Expected first return time to layer n from (n, mu) on a dense
    truncation: one step, then the expected absorption time into layer n
    (made absorbing) from wherever that step landed. The top level's up
    block folds into its stay block so no probability leaks."""
    d = model.d
    size = (cutoff + 1) * d

    def idx(k):
        return k * d

    t = np.zeros((size, size))
    for k in range(cutoff + 1):
        i = idx(k)
        if k == n:
            continue  # absorbing target layer
        if k == 0:
            t[i : i + d, i : i + d] += model.r0
            t[i : i + d, idx(1) : idx(1) + d] += model.p0
            continue
        blk = model.block_at(k)
        stay = blk.stay if k < cutoff else blk.stay + blk.up
        t[i : i + d, i : i + d] += stay
        t[i : i + d, idx(k - 1) : idx(k - 1) + d] += blk.down
        if k < cutoff:
            t[i : i + d, idx(k + 1) : idx(k + 1) + d] += blk.up
    ones = np.ones(size)
    ones[idx(n) : idx(n) + d] = 0.0
    tau = np.linalg.solve(np.eye(size) - t, ones)
    blk = model.block_at(n)
    out = 1.0
    out += float((mu @ blk.up) @ tau[idx(n + 1) : idx(n + 1) + d])
    if n >= 1:
        out += float((mu @ blk.down) @ tau[idx(n - 1) : idx(n - 1) + d])
    return out


def test_return_time_bound_scalar(d1_pos):
    rb = hs.return_time_bound(d1_pos)
    assert rb.finite
    assert abs(rb.value - 3.5) < 1e-8


def test_classify_positive_recurrent(d1_pos, retrial_c1):
    for model in (d1_pos, retrial_c1):
        c = hs.classify(model)
        assert c.verdict == hs.POSITIVE_RECURRENT
        assert c.certificate == "return-time-series-finite"
        assert np.isfinite(c.return_bound)
        assert c.tail_radius_down < 1.0


def test_classify_null_recurrent(d1_null):
    c = hs.classify(d1_null)
    assert c.verdict == hs.NULL_RECURRENT
    assert c.certificate == "visits-divergent-return-time-infinite"
    assert c.return_bound == np.inf
    assert c.boundary_visits == np.inf
    assert abs(c.tail_radius_up - 1.0) < 1e-6
    assert abs(c.tail_radius_down - 1.0) < 1e-6


def test_classify_transient(d1_transient):
    c = hs.classify(d1_transient)
    assert c.verdict == hs.TRANSIENT
    assert c.certificate == "boundary-visits-finite"
    assert abs(c.boundary_visits - 1.75) < 1e-10
    assert c.tail_radius_up < 1.0


def test_classify_inconclusive_when_no_certificate_applies():
    """Forty drift-down prefix levels push the return-series terms below the
    divergence floor before the critical tail is reached, so neither the
    finite nor the infinite certificate can fire."""
    down_block = hs.BlockTriple(
        up=np.array([[0.3]]), down=np.array([[0.7]]), stay=np.array([[0.0]])
    )
    crit = hs.BlockTriple(
        up=np.array([[0.5]]), down=np.array([[0.5]]), stay=np.array([[0.0]])
    )
    m = hs.QbdModel(
        d=1,
        r0=np.array([[0.0]]),
        p0=np.array([[1.0]]),
        prefix=(down_block,) * 40,
        tail=crit,
    )
    c = hs.classify(m)
    assert c.verdict == hs.INCONCLUSIVE
    assert c.certificate == "no-certificate"


def test_classify_callback_model_inconclusive():
    def level_fn(n):
        return hs.BlockTriple(
            up=np.array([[0.3]]),
            down=np.array([[0.7]]),
            stay=np.array([[0.0]]),
        )

    m = hs.CallbackModel(
        d=1, r0=np.array([[0.0]]), p0=np.array([[1.0]]), level_fn=level_fn
    )
    c = hs.classify(m)
    assert c.verdict == hs.INCONCLUSIVE
    assert c.certificate == "no-limiting-tail"


def test_expected_return_time_boundary_kac(retrial_c1):
    """Reciprocal of the mean return time from the censored boundary measure
    equals the stationary mass of the boundary layer."""
    mu0 = hs.censored_measure(retrial_c1)
    ert = hs.expected_return_time(retrial_c1, mu0, 0)
    assert abs(ert - 15.0 / 7.0) < 1e-9
    nu0_mass = hs.stationary_dist(retrial_c1).nu[0].sum()
    assert abs(1.0 / ert - nu0_mass) <= 1e-8


def test_expected_return_time_scalar_boundary(d1_pos):
    # 1 step up then mean 1/(q-p) steps back down
    ert = hs.expected_return_time(d1_pos, np.array([1.0]), 0)
    assert abs(ert - 3.5) < 1e-9


def test_expected_return_time_vs_dense_solve(retrial_c1):
    for n in (1, 2, 4):
        for mu in (np.array([1.0, 0.0]), np.array([0.25, 0.75])):
            got = hs.expected_return_time(retrial_c1, mu, n)
            want = _dense_return_time(retrial_c1, 220, n, mu)
            assert abs(got - want) < 1e-7


def test_expected_return_time_vs_dense_solve_random():
    rng = np.random.default_rng(41)
    model, _ = random_pos_recurrent_model(rng, 3)
    mu = np.array([0.5, 0.2, 0.3])
    for n in (1, 3):
        got = hs.expected_return_time(model, mu, n)
        want = _dense_return_time(model, 200, n, mu)
        assert abs(got - want) < 1e-7


def test_expected_return_time_infinite_on_null(d1_null):
    assert hs.expected_return_time(d1_null, np.array([1.0]), 0) == np.inf


def test_return_time_below_bound(retrial_c1):
    bound = hs.return_time_bound(retrial_c1).value
    mu0 = hs.censored_measure(retrial_c1)
    assert hs.expected_return_time(retrial_c1, mu0, 0) <= bound + 1e-9


def test_expected_return_time_validates_measure(d1_pos):
    with pytest.raises(ValueError):
        hs.expected_return_time(d1_pos, np.array([-0.5]), 0)
    with pytest.raises(ValueError):
        hs.expected_return_time(d1_pos, np.array([0.5, 0.5]), 0)


def test_classify_invariant_under_phase_relabeling(retrial_c2):
    """Permuting the phase labels must not change any verdict quantity."""
    perm = np.array([2, 0, 1])
    p = np.eye(3)[perm]

    def relabel(mat):
        return p @ mat @ p.T

    m = retrial_c2
    swapped = hs.QbdModel(
        d=3,
        r0=relabel(m.r0),
        p0=relabel(m.p0),
        prefix=tuple(
            hs.BlockTriple(
                up=relabel(b.up), down=relabel(b.down), stay=relabel(b.stay)
            )
            for b in m.prefix
        ),
        tail=hs.BlockTriple(
            up=relabel(m.tail.up),
            down=relabel(m.tail.down),
            stay=relabel(m.tail.stay),
        ),
    )
    a = hs.classify(m)
    b = hs.classify(swapped)
    assert a.verdict == b.verdict
    assert abs(a.return_bound - b.return_bound) < 1e-8
    assert abs(a.tail_radius_down - b.tail_radius_down) < 1e-9


def test_classify_records_horizon_and_details(d1_null):
    c = hs.classify(d1_null, horizon=5000)
    assert c.horizon == 5000
    assert isinstance(c.details, dict)
    assert c.visit_terms is not None
    assert len(c.visit_partial_sums) == len(c.visit_terms)
