"""Shared test utilities: random tensor factories and independent oracles.

The oracles re-implement the constitutive formulas from scratch (they never
call into the production evaluation paths they are used to check).
"""

import numpy as np

SQ23 = np.sqrt(2.0 / 3.0)


def sym(A):
    return 0.5 * (A + A.T)


def random_rotation(rng):
    Q, R = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def random_spd(rng, log_range=0.5, unit_det=False):
    """SPD tensor with log-eigenvalues uniform in +-log_range."""
    u = rng.uniform(-log_range, log_range, 3)
    if unit_det:
        u -= u.mean()
    Q = random_rotation(rng)
    return sym((Q * np.exp(u)) @ Q.T)


def spd_congruence_perturb(M, eps, rng):
    P = np.eye(3) + eps * rng.uniform(-1.0, 1.0, (3, 3))
    A = sym(P.T @ M @ P)
    return A * np.linalg.det(A) ** (-1.0 / 3.0)


def random_general(rng, scale=1.0):
    return rng.normal(size=(3, 3)) * scale


# ---------------------------------------------------------------------------
# independent constitutive oracles
# ---------------------------------------------------------------------------

def oracle_unimodular(A):
    return np.linalg.det(A) ** (-1.0 / 3.0) * A


def oracle_psi_el(C, Ci, k, mu):
    """Elastic stored energy, volumetric plus isochoric split."""
    Ce = C @ np.linalg.inv(Ci)
    d = np.linalg.det(Ce)
    return (k / 50.0 * (d ** 2.5 + d ** -2.5 - 2.0)
            + mu / 2.0 * (np.trace(oracle_unimodular(Ce)) - 3.0))


def oracle_psi_kin(Ci, Cki, c_k):
    Ck = Ci @ np.linalg.inv(Cki)
    return c_k / 4.0 * (np.trace(oracle_unimodular(Ck)) - 3.0)


def oracle_psi_iso(s, s_d, gamma):
    return 0.5 * gamma * (s - s_d) ** 2


def fd_tensor_derivative(f, X, step=1e-6):
    """Central-difference derivative of a scalar function of a 3x3 tensor,
    using single-entry (non-symmetric) perturbations so the unconstrained
    tensor derivative is recovered."""
    D = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            Xp = X.copy()
            Xp[i, j] += step
            Xm = X.copy()
            Xm[i, j] -= step
            D[i, j] = (f(Xp) - f(Xm)) / (2.0 * step)
    return D


def oracle_driving_force_norm(C, Ci, Cki_list, params):
    """Direct evaluation of sqrt(tr Xi^2) for the deviatoric driving force."""
    Xi = params.mu * (oracle_unimodular(C) @ np.linalg.inv(Ci))
    for ch, Ck in zip(params.channels, Cki_list):
        Xi = Xi - 0.5 * ch.c * (Ci @ np.linalg.inv(Ck))
    Xi = Xi - np.trace(Xi) / 3.0 * np.eye(3)
    return np.sqrt(max(np.einsum("ij,ji->", Xi, Xi), 0.0))


def bisect_root(f, lo, hi, iters=200):
    """Plain bisection; assumes a sign change on [lo, hi]."""
    f_lo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# random plastic-step suite (strain increments up to 10%, xi up to 0.2)
# ---------------------------------------------------------------------------

def sample_plastic_step(params, rng):
    from pebm.integrators import StepInput
    from pebm.material import MaterialState

    u = rng.uniform(-0.10, 0.10, 3)
    Q1 = random_rotation(rng)
    C_n = sym((Q1 * np.exp(u)) @ Q1.T)
    C_n_bar = oracle_unimodular(C_n)
    Ci = spd_congruence_perturb(C_n_bar, 0.10, rng)
    Cki = tuple(spd_congruence_perturb(Ci, 0.07, rng)
                for _ in params.channels)
    s = rng.uniform(0.0, 0.3)
    s_d = rng.uniform(0.0, s)
    G = rng.normal(size=(3, 3))
    G *= rng.uniform(0.02, 0.10) / np.linalg.norm(G)
    F_inc = np.eye(3) + G
    C_np1 = sym(F_inc.T @ C_n @ F_inc)
    return StepInput(C_n=C_n, C_np1=C_np1, dt=1.0,
                     state_n=MaterialState(Ci=Ci, Cki=Cki, s=s, s_d=s_d),
                     params=params)


def plastic_step_suite(params, n=100, seed=20260808):
    """n plastic step inputs (trial overstress > 0) for the given material."""
    from pebm.integrators import trial_overstress

    rng = np.random.default_rng(seed)
    suite = []
    attempts = 0
    while len(suite) < n and attempts < 20 * n:
        attempts += 1
        inp = sample_plastic_step(params, rng)
        if trial_overstress(inp) > 0.0:
            suite.append(inp)
    assert len(suite) == n, "sampler failed to produce enough plastic steps"
    return suite
