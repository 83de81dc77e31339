import numpy as np
import pytest

import slq_turnpike as sq


@pytest.fixture(scope="session")
def ex1():
    return sq.example_problem(1)


@pytest.fixture(scope="session")
def ex1_reduced(ex1):
    return sq.reduce_problem(ex1)


@pytest.fixture(scope="session")
def ex1_are(ex1_reduced):
    return sq.solve_are(ex1_reduced, h=2e-3)


@pytest.fixture(scope="session")
def ex1_static(ex1_reduced, ex1_are):
    return sq.solve_static(ex1_reduced, ex1_are)


@pytest.fixture(scope="session")
def ex2():
    return sq.example_problem(2)


@pytest.fixture(scope="session")
def ex2_reduced(ex2):
    return sq.reduce_problem(ex2)


@pytest.fixture(scope="session")
def ex2_are(ex2_reduced):
    return sq.solve_are(ex2_reduced, h=2e-3)


@pytest.fixture(scope="session")
def linear_scalar():
    """Closed-form instance: flow Sigma' = -2 Sigma + 1, limit 1/2."""
    return sq.ReducedLQProblem(
        n=1, m=1,
        Ahat=np.array([[-1.0]]), B=np.zeros((1, 1)),
        Chat=np.zeros((1, 1)), D=np.array([[1.0]]),
        bhat=np.zeros(1), sigmahat=np.zeros(1),
        Qhat=np.array([[1.0]]), R=np.array([[1.0]]),
        qhat=np.zeros(1), phi0=0.0,
    )


@pytest.fixture(scope="session")
def ex1_horizon20(ex1_reduced, ex1_are, ex1_static):
    return sq.solve_horizon(ex1_reduced, T=20.0, h=2e-3,
                            are=ex1_are, static=ex1_static)


def random_stabilizable_problem(rng, n, m, noise_scale=0.25):
    """Draw a stabilizable instance by sampling a stable closed loop and
    un-closing it with a random gain.

    The closed-loop drift gets a definite negative shift and the loop
    diffusion is scaled until the mean-square generator abscissa clears a
    margin, so the un-closed pair is certainly stabilizable.
    """
    def ms_abscissa(A, C):
        return float(np.max(np.linalg.eigvals(sq.ms_generator(A, C)).real))

    Acl = rng.standard_normal((n, n))
    Acl = Acl - (0.5 + np.max(np.linalg.eigvals(Acl).real)) * np.eye(n)
    Ccl = noise_scale * rng.standard_normal((n, n))
    while ms_abscissa(Acl, Ccl) > -0.2:
        Ccl = 0.5 * Ccl
    B = rng.standard_normal((n, m))
    D = 0.3 * rng.standard_normal((n, m))
    theta = rng.standard_normal((m, n))
    A = Acl - B @ theta
    C = Ccl - D @ theta
    return sq.ReducedLQProblem(
        n=n, m=m, Ahat=A, B=B, Chat=C, D=D,
        bhat=np.zeros(n), sigmahat=np.zeros(n),
        Qhat=np.eye(n), R=np.eye(m), qhat=np.zeros(n), phi0=0.0,
    )
