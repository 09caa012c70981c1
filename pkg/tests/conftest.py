import numpy as np
import pytest

from nfde_lab import (
    GOLDEN_FREQ,
    AtomicMeasureFamily,
    DOperatorSpec,
    MeasureAtom,
    NeutralDiagSystem,
    TorusFlow,
    TorusPoint,
    TransportSpec,
    TrigPoly,
)
from nfde_lab.d_operator import identity_poly_matrix


@pytest.fixture(scope="session")
def golden_flow():
    return TorusFlow([GOLDEN_FREQ])


@pytest.fixture(scope="session")
def origin():
    return TorusPoint([0.0])


def scalar_dspec(flow, c_poly, lag=1.0):
    """m=1 operator with B = 1 and a single delayed atom."""
    if not isinstance(c_poly, TrigPoly):
        c_poly = TrigPoly.const(c_poly)
    atom = MeasureAtom(lag, [[c_poly]])
    return DOperatorSpec(1, identity_poly_matrix(1), AtomicMeasureFamily((atom,)), flow)


def s1_system(flow):
    """Scalar closed self-loop: unit linear gain, c = 0.3 + 0.2 sin, alpha = rho = 1."""
    c = TrigPoly.from_terms(0.3, [([1], 0.0, 0.2)])
    return NeutralDiagSystem(
        m=1,
        c=(c,),
        alpha=np.array([1.0]),
        rho=np.array([[1.0]]),
        transports=((TransportSpec.linear(1.0),),),
        flow=flow,
    )


def const_c_system(flow, c0=0.3, gain=1.0, alpha=1.0, rho=1.0):
    return NeutralDiagSystem(
        m=1,
        c=(TrigPoly.const(c0),),
        alpha=np.array([alpha]),
        rho=np.array([[rho]]),
        transports=((TransportSpec.linear(gain),),),
        flow=flow,
    )


@pytest.fixture(scope="session")
def s1(golden_flow):
    return s1_system(golden_flow)


def random_contraction_spec(rng, flow, h=0.05, lam_max=0.7, nonneg=False):
    """Random operator with B = I and certified contraction factor <= lam_max.

    Atom lags are multiples of h so that series applications gather exactly.
    When nonneg is set, every weight entry is a nonnegative polynomial
    (constant dominating its oscillation), giving an entrywise-nonnegative
    delayed part.
    """
    m = int(rng.integers(1, 4))
    n_atoms = int(rng.integers(1, 4))
    lam_target = float(rng.uniform(0.25, lam_max))
    lag_steps = rng.choice(np.arange(5, 31), size=n_atoms, replace=False)
    shares = rng.dirichlet(np.ones(n_atoms))
    atoms = []
    for a in range(n_atoms):
        weight = []
        for i in range(m):
            row_budget = lam_target * shares[a]
            raw = rng.dirichlet(np.ones(m)) * row_budget
            row = []
            for j in range(m):
                b = raw[j]
                k = int(rng.integers(1, 3))
                if nonneg:
                    osc = 0.45 * b
                    row.append(TrigPoly.from_terms(0.55 * b, [([k], 0.0, osc)]))
                else:
                    split = rng.uniform(0.3, 0.7)
                    sign = rng.choice([-1.0, 1.0])
                    row.append(
                        TrigPoly.from_terms(
                            sign * split * b, [([k], 0.0, (1.0 - split) * b)]
                        )
                    )
            weight.append(row)
        atoms.append(MeasureAtom(float(lag_steps[a]) * h, weight))
    spec = DOperatorSpec(
        m, identity_poly_matrix(m), AtomicMeasureFamily(tuple(atoms)), flow
    )
    return spec


def random_history(rng, m, h, horizon, nonneg=False):
    freqs = rng.uniform(0.2, 2.0, size=(3, m))
    phases = rng.uniform(0, 2 * np.pi, size=(3, m))
    amps = rng.uniform(0.2, 1.0, size=(3, m))
    base = rng.uniform(-1.0, 1.0, size=m)

    def f(s):
        out = np.tile(base, (s.size, 1))
        for k in range(3):
            out = out + amps[k][None, :] * np.sin(
                freqs[k][None, :] * s[:, None] + phases[k][None, :]
            )
        if nonneg:
            out = np.abs(out)
        return out

    from nfde_lab import from_function

    return from_function(f, h, horizon)
