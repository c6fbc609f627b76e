"""Shared fixtures: small hand-checkable chains plus a seeded random model factory."""

import numpy as np
import pytest

import halfstrip as hs


_ACCEPTANCE_LINES = []


def record_acceptance(line):
    """Collect a one-line acceptance result for the terminal summary."""
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def scalar_chain(p, q, r=0.0, r0=0.0):
    """d=1 half-strip walk: up p, down q, stay r in the tail; boundary stays
    with probability r0 and moves up otherwise."""
    tail = hs.BlockTriple(
        up=np.array([[p]]), down=np.array([[q]]), stay=np.array([[r]])
    )
    return hs.QbdModel(
        d=1,
        r0=np.array([[r0]]),
        p0=np.array([[1.0 - r0]]),
        prefix=(),
        tail=tail,
    )


@pytest.fixture(scope="session")
def d1_pos():
    # drift down: up 0.3, down 0.7
    return scalar_chain(0.3, 0.7)


@pytest.fixture(scope="session")
def d1_transient():
    return scalar_chain(0.7, 0.3)


@pytest.fixture(scope="session")
def d1_null():
    return scalar_chain(0.5, 0.5)


@pytest.fixture(scope="session")
def perm_chain():
    # two phases coupled by the swap matrix; behaves like the scalar chain
    # on each excursion but exercises genuine matrix structure
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    tail = hs.BlockTriple(up=0.3 * m, down=0.7 * m, stay=np.zeros((2, 2)))
    return hs.QbdModel(
        d=2,
        r0=np.zeros((2, 2)),
        p0=m.copy(),
        prefix=(),
        tail=tail,
    )


def retrial_model(arrival, service, servers, theta="0.3", gamma=None):
    gen = hs.build_retrial(arrival, service, servers, hs.RetrySchedule.parse(theta))
    return hs.uniformize(gen, gamma=gamma)


@pytest.fixture(scope="session")
def retrial_c1():
    # frozen-value tests rely on gamma=1 exactly
    return retrial_model(0.2, 0.5, 1, gamma=1.0)


@pytest.fixture(scope="session")
def retrial_c2():
    return retrial_model(0.1, 0.3, 2, theta="0.3")


def random_pos_recurrent_model(rng, d, n_prefix=2, radius_cap=0.9):
    """Random irreducible prefix+tail model with the tail drifting down.

    Dirichlet rows keep every entry strictly positive, so validation passes
    with no reducibility warnings. Resamples until the descending offspring
    radius clears radius_cap; the down-weighted alphas make that immediate
    almost always.
    """
    alphas = np.concatenate(
        [np.full(d, 3.0), np.full(d, 1.0), np.full(d, 0.7)]
    )
    while True:
        def triple():
            rows = rng.dirichlet(alphas, size=d)
            return hs.BlockTriple(
                down=rows[:, :d], stay=rows[:, d : 2 * d], up=rows[:, 2 * d :]
            )

        boundary = rng.dirichlet(np.full(2 * d, 1.0), size=d)
        model = hs.QbdModel(
            d=d,
            r0=boundary[:, :d],
            p0=boundary[:, d:],
            prefix=tuple(triple() for _ in range(n_prefix)),
            tail=triple(),
        )
        data = hs.branching_data(model)
        if data.radius_down < radius_cap:
            return model, data
