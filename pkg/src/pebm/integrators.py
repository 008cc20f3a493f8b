"""Stress-update algorithms over one time step.

Three integrators share the same elastic predictor:

* ``pebm_step``  -- partitioned Euler Backward: the coupled update is split
  into closed-form solves (inelastic metric, substructure metrics) glued by a
  scalar consistency equation in the inelastic increment xi, re-solved over a
  small number of relaxation passes.
* ``ebmsc_step`` -- Euler Backward on the full coupled tensor system with a
  subsequent unit-determinant correction, wrapped in an outer scalar solve.
* ``em_step``    -- exponential-map variant of the same coupled solve; the
  trace-free generator preserves the determinant without correction.

All step functions are pure: they take a :class:`StepInput` and return a
:class:`StepReport` without touching shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .material import (F0, SQ23, MaterialParams, MaterialState,
                       _driving_force_norm, _overstress, f2_driving_force,
                       hardening_R, pk2_stress, update_s_sd)
from .tensor import (DomainError, I3, dev, eigh_spd, inv, inv_sqrt_spd,
                     matrix_exp, principal_sqrt_of_spd_product, sqrt_spd, sym,
                     unimodular)

__all__ = [
    "StepFailure",
    "StepInput",
    "StepReport",
    "trial_overstress",
    "push_forward_estimate",
    "push_forward_estimate_noninvariant",
    "rough_xi_estimate",
    "CorrectorWorkspace",
    "corrector_workspace",
    "naive_y_form",
    "stable_y_form",
    "z_perturbation_estimate",
    "solve_ci_closed_form",
    "update_cki_explicit",
    "solve_consistency",
    "pebm_step",
    "ebmsc_step",
    "em_step",
]

# scalar consistency solve (shared by all integrators)
CONSISTENCY_RTOL = 1.0e-10
CONSISTENCY_XTOL = 1.0e-14
CONSISTENCY_MAX_ITER = 50
CONSISTENCY_XI_CAP = 1.0

# coupled 6(1+N)-dimensional solve of the baselines: aim for INNER_TARGET,
# accept INNER_ACCEPT if the iteration cap is reached first
INNER_TARGET_RTOL = 1.0e-13
INNER_ACCEPT_RTOL = 1.0e-11
INNER_MAX_ITER = 25
INNER_GROWTH_LIMIT = 3


class StepFailure(RuntimeError):
    """A time step could not be completed; the caller may cut the step."""


@dataclass(frozen=True)
class StepInput:
    """One local time step: strain at both ends, step size, prior state."""
    C_n: np.ndarray
    C_np1: np.ndarray
    dt: float
    state_n: MaterialState
    params: MaterialParams

    def __post_init__(self):
        if not self.dt > 0.0:
            raise DomainError("dt must be positive")


@dataclass
class StepReport:
    """Committed results of one step plus solver diagnostics.

    ``matrix_ops_estimate`` counts 3x3 matrix operations (multiplications,
    inversions, factorisations for roots/exponentials; dense linear solves
    expressed in 3x3-multiply flop equivalents) actually performed by the
    solver core, the currency of the computational-effort comparison.
    """
    state_np1: MaterialState
    xi: float
    pk2: np.ndarray
    newton_iterations_total: int
    relaxation_passes: int
    subincrements_used: int
    elastic: bool
    inner_newton_iterations_total: int = 0
    residual_evaluations_total: int = 0
    matrix_ops_estimate: int = 0


# ---------------------------------------------------------------------------
# elastic predictor
# ---------------------------------------------------------------------------

def trial_overstress(inp: StepInput) -> float:
    """Overstress for frozen internal variables at the new strain; <= 0 means
    the step is elastic."""
    st = inp.state_n
    return _overstress(inp.C_np1, st.Ci, st.Cki, 0.0, st.s, st.s_d, inp.params)


def _elastic_report(inp: StepInput) -> StepReport:
    T = pk2_stress(inp.C_np1, inp.state_n.Ci, inp.params)
    return StepReport(state_np1=inp.state_n, xi=0.0, pk2=T,
                      newton_iterations_total=0, relaxation_passes=0,
                      subincrements_used=0, elastic=True)


# ---------------------------------------------------------------------------
# corrector building blocks
# ---------------------------------------------------------------------------

def push_forward_estimate(Ci_n: np.ndarray, C_n: np.ndarray,
                          C_np1: np.ndarray) -> np.ndarray:
    """First guess for the new inelastic metric: shift the old one by the
    push-forward that maps the old unimodular strain onto the new one.

    The shift tensor is the principal root of unimodular(C_np1^-1 C_n); being
    built from the strain ratio, the estimate transforms consistently under
    isochoric changes of the reference configuration.
    """
    R = principal_sqrt_of_spd_product(C_np1, C_n)
    det_ratio = float(np.linalg.det(C_n) / np.linalg.det(C_np1))
    F_sh = det_ratio ** (-1.0 / 6.0) * R
    F_sh_inv = inv(F_sh)
    return sym(F_sh_inv.T @ Ci_n @ F_sh_inv)


def push_forward_estimate_noninvariant(Ci_n: np.ndarray, C_n: np.ndarray,
                                       C_np1: np.ndarray) -> np.ndarray:
    """Negative-control shift built from the two strain roots separately.

    It also maps the old unimodular strain onto the new one but is *not*
    equivariant under reference changes; kept only so the invariance audit
    has a violation to detect.
    """
    F_sh = inv_sqrt_spd(unimodular(C_np1)) @ sqrt_spd(unimodular(C_n))
    F_sh_inv = inv(F_sh)
    return sym(F_sh_inv.T @ Ci_n @ F_sh_inv)


def rough_xi_estimate(f_trial: float, dt: float,
                      params: MaterialParams) -> float:
    """Initial inelastic increment from the scalar predictor equation
    2*mu*xi + F0*(xi*eta/dt)^(1/m) = f_trial, solved on [0, f_trial/(2 mu)].
    """
    if f_trial <= 0.0:
        return 0.0
    hi = f_trial / (2.0 * params.mu)
    if params.eta == 0.0:
        return hi
    lo = 0.0
    exp = 1.0 / params.m
    coef = params.eta / dt

    def g(x):
        return 2.0 * params.mu * x + F0 * (x * coef) ** exp - f_trial

    x = 0.5 * hi
    for _ in range(200):
        gx = g(x)
        if gx > 0.0:
            hi = x
        else:
            lo = x
        # Newton inside the bracket, bisection otherwise
        dg = 2.0 * params.mu + F0 * exp * coef * (x * coef) ** (exp - 1.0) \
            if x > 0.0 else math.inf
        x_new = x - gx / dg
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-12 * max(x_new, 1e-300):
            return x_new
        x = x_new
    return x


@dataclass(frozen=True)
class CorrectorWorkspace:
    """Quantities frozen during one consistency solve (fixed substructure
    metrics): the weighted inverse-metric average Phi, its square roots and
    determinant, congruence-transformed step tensors, and cached channel
    inverses."""
    Ci_n: np.ndarray
    Ci_n_inv: np.ndarray
    C_hat: np.ndarray                 # unimodular part of C at t_{n+1}
    dt: float
    s_n: float
    s_d_n: float
    params: MaterialParams
    Cki_est: tuple[np.ndarray, ...]
    Cki_inv: tuple[np.ndarray, ...]
    c: float
    Phi: np.ndarray | None
    Phi_half: np.ndarray | None
    Phi_inv_half: np.ndarray | None
    det_Phi: float
    M_ci: np.ndarray | None           # Phi_half Ci_n Phi_half
    M_chat: np.ndarray | None         # Phi_half C_hat Phi_half
    correction: str = "unimodular"


def corrector_workspace(inp: StepInput, Cki_est,
                        correction: str = "unimodular") -> CorrectorWorkspace:
    params = inp.params
    Cki_est = tuple(Cki_est)
    if Cki_est:
        Cki_inv = tuple(np.linalg.inv(np.stack(Cki_est)))
    else:
        Cki_inv = ()
    c = params.c_total
    Phi = Phi_half = Phi_inv_half = M_ci = M_chat = None
    det_Phi = 1.0
    C_hat = unimodular(inp.C_np1)
    st = inp.state_n
    if c > 0.0:
        Phi = np.zeros((3, 3))
        for ch, Ck_inv in zip(params.channels, Cki_inv):
            Phi = Phi + (ch.c / c) * Ck_inv
        Phi = sym(Phi)
        w, Q = eigh_spd(Phi, "Phi")
        sq = np.sqrt(w)
        Phi_half = sym((Q * sq) @ Q.T)
        Phi_inv_half = sym((Q / sq) @ Q.T)
        det_Phi = float(w[0] * w[1] * w[2])
        M_ci = sym(Phi_half @ st.Ci @ Phi_half)
        M_chat = sym(Phi_half @ C_hat @ Phi_half)
    return CorrectorWorkspace(Ci_n=st.Ci, Ci_n_inv=inv(st.Ci), C_hat=C_hat,
                              dt=inp.dt, s_n=st.s, s_d_n=st.s_d,
                              params=params, Cki_est=Cki_est,
                              Cki_inv=Cki_inv, c=c, Phi=Phi,
                              Phi_half=Phi_half, Phi_inv_half=Phi_inv_half,
                              det_Phi=det_Phi, M_ci=M_ci, M_chat=M_chat,
                              correction=correction)


def naive_y_form(A: np.ndarray, z: float, xi_prime: float) -> np.ndarray:
    """Textbook solution of z Y + xi' Y^2 = A; divides the matrix square root
    by 2 xi', which amplifies its round-off error for small xi'."""
    if xi_prime == 0.0:
        raise DomainError("naive form is undefined at xi' = 0")
    S = sqrt_spd(z * z * I3 + 4.0 * xi_prime * A)
    return (S - z * I3) / (2.0 * xi_prime)


def stable_y_form(A: np.ndarray, z: float, xi_prime: float) -> np.ndarray:
    """Round-off-stable form Y = 2 A [(z^2 1 + 4 xi' A)^(1/2) + z 1]^(-1);
    equivalent to the naive form in exact arithmetic."""
    if xi_prime == 0.0:
        return A / z
    S = sqrt_spd(z * z * I3 + 4.0 * xi_prime * A)
    return sym(2.0 * A @ inv(S + z * I3))


def _z_estimate(det_A: float, tr_A: float, det_Phi: float,
                xi_prime: float) -> float:
    if det_A <= 0.0 or det_Phi <= 0.0:
        raise DomainError("z estimate requires positive determinants")
    z0 = (det_A / det_Phi) ** (1.0 / 3.0)
    return z0 - tr_A / (3.0 * z0) * xi_prime


def z_perturbation_estimate(A: np.ndarray, Phi: np.ndarray,
                            xi_prime: float) -> float:
    """First-order-in-xi' estimate of the determinant multiplier z; exact for
    xi' = 0 and second-order accurate otherwise."""
    return _z_estimate(float(np.linalg.det(A)), float(np.trace(A)),
                       float(np.linalg.det(Phi)), xi_prime)


def _additive_det_correction(M: np.ndarray) -> np.ndarray:
    """Negative-control determinant fix M + eps*1 (diagonal shift).

    Unlike the multiplicative unit-determinant projection this correction is
    not equivariant under reference changes; used only by the audit.
    """
    mu = np.linalg.eigvalsh(sym(M))
    eps = 0.0
    for _ in range(60):
        vals = mu + eps
        g = float(np.prod(vals)) - 1.0
        dg = float(vals[1] * vals[2] + vals[0] * vals[2] + vals[0] * vals[1])
        step = g / dg
        eps -= step
        if abs(step) <= 1e-15 * max(1.0, abs(eps)):
            break
    return sym(M + eps * I3)


def _ci_update(ws: CorrectorWorkspace, xi: float,
               with_inverse: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Closed-form inelastic-metric update; optionally also its inverse,
    reconstructed from the same eigenbasis at no extra factorisation cost."""
    if xi == 0.0:
        return ws.Ci_n, (ws.Ci_n_inv if with_inverse else None)
    params = ws.params
    F2 = f2_driving_force(xi, ws.dt, ws.s_n, ws.s_d_n, params)
    q = 2.0 * xi * params.mu / F2
    try:
        if ws.c == 0.0:
            Ci_star = ws.Ci_n + q * ws.C_hat
            if ws.correction == "additive_identity":
                Ci = _additive_det_correction(Ci_star)
            else:
                Ci = sym(unimodular(Ci_star))
            eigh_spd(Ci, "updated Ci")
            return Ci, (inv(Ci) if with_inverse else None)

        A = ws.M_ci + q * ws.M_chat
        w, Q = eigh_spd(A, "corrector tensor")
        xi_prime = ws.c * xi / F2
        z = _z_estimate(float(w[0] * w[1] * w[2]), float(w.sum()),
                        ws.det_Phi, xi_prime)
        # stable root expression evaluated on the eigenvalues of A
        y = 2.0 * w / (np.sqrt(z * z + 4.0 * xi_prime * w) + z)
        if not (y[0] > 0.0 and np.all(np.isfinite(y))):
            raise DomainError("root expression lost positive definiteness")
        W = ws.Phi_inv_half @ Q
        Ci_star = sym((W * y) @ W.T)
        det_star = float(y[0] * y[1] * y[2]) / ws.det_Phi
        if ws.correction == "additive_identity":
            Ci = _additive_det_correction(Ci_star)
            return Ci, (inv(Ci) if with_inverse else None)
        alpha = det_star ** (-1.0 / 3.0)
        Ci = alpha * Ci_star
        Ci_inv = None
        if with_inverse:
            V = ws.Phi_half @ Q
            Ci_inv = sym((V / y) @ V.T) / alpha
        return Ci, Ci_inv
    except DomainError as err:
        raise StepFailure(f"closed-form corrector failed: {err}") from err


def solve_ci_closed_form(ws: CorrectorWorkspace, xi: float) -> np.ndarray:
    """Closed-form inelastic-metric update for frozen substructure metrics.

    For xi = 0 the prior metric is returned unchanged.  Otherwise the
    quadratic tensor equation z Ci + xi' Ci Phi Ci = B is solved through the
    congruence Y = Phi^(1/2) Ci Phi^(1/2) with the stable root expression and
    the perturbation estimate of z, and the result is projected back onto the
    unit-determinant manifold.
    """
    return _ci_update(ws, xi, with_inverse=False)[0]


def update_cki_explicit(Cki_n: np.ndarray, Ci: np.ndarray, xi: float,
                        c_k: float, kappa_k: float) -> np.ndarray:
    """Substructure-metric update: unit-determinant part of
    Cki_n + xi*kappa_k*c_k*Ci.  SPD with det = 1 by construction."""
    return sym(unimodular(Cki_n + (xi * kappa_k * c_k) * Ci))


# ---------------------------------------------------------------------------
# scalar consistency condition
# ---------------------------------------------------------------------------

def _consistency_residual(ws: CorrectorWorkspace, xi: float) -> float:
    params = ws.params
    Ci, Ci_inv = _ci_update(ws, xi, with_inverse=True)
    Xi = params.mu * (ws.C_hat @ Ci_inv)
    for ch, Ck_inv in zip(params.channels, ws.Cki_inv):
        Xi = Xi - (0.5 * ch.c) * (Ci @ Ck_inv)
    t = (Xi[0, 0] + Xi[1, 1] + Xi[2, 2]) / 3.0
    Xi[0, 0] -= t
    Xi[1, 1] -= t
    Xi[2, 2] -= t
    F1 = math.sqrt(max(float(np.einsum("ij,ji->", Xi, Xi)), 0.0))
    f = F1 - SQ23 * (params.K + hardening_R(xi, ws.s_n, ws.s_d_n, params))
    if params.eta == 0.0:
        return f
    flow = (f / F0) ** params.m if f > 0.0 else 0.0
    return xi * params.eta - ws.dt * flow


def _consistency_eval_ops(ws: CorrectorWorkspace, xi: float) -> int:
    """3x3 matrix operations of one consistency-residual evaluation."""
    n_ch = len(ws.params.channels)
    if xi == 0.0:
        return 1 + n_ch               # driving-force products, metric cached
    if ws.c == 0.0:
        return 3 + n_ch               # linear branch: inverse plus products
    return 6 + n_ch                   # factorise A, half-congruences, products


def _workspace_ops(ws: CorrectorWorkspace) -> int:
    n_ch = len(ws.params.channels)
    if ws.c == 0.0:
        return 1 + n_ch
    return 8 + n_ch                   # channel inverses, Phi roots, congruences


def _solve_consistency(ws: CorrectorWorkspace, f_trial: float,
                       xi_init: float) -> tuple[float, int, int, int]:
    """Newton with a central-difference derivative for the incremental
    consistency condition, safeguarded by a sign-change bracket that is grown
    geometrically from the initial guess whenever a Newton proposal leaves
    the admissible range.

    Returns (xi, newton_iterations, residual_evaluations, matrix_ops).
    """
    tol = CONSISTENCY_RTOL * max(1.0, f_trial)
    evals = 0
    ops = 0

    def R(x):
        nonlocal evals, ops
        evals += 1
        ops += _consistency_eval_ops(ws, x)
        return _consistency_residual(ws, x)

    r0 = R(0.0)
    # no-flow exits: below yield in the rate-independent branch (residual is
    # the overstress itself), or negligible viscous flow; the viscous
    # residual xi*eta - dt*<f/f0>^m is non-positive at xi = 0 by
    # construction, so its sign alone does not mean "elastic"
    if abs(r0) <= tol or (ws.params.eta == 0.0 and r0 < 0.0):
        return 0.0, 0, evals, ops
    sign0 = r0 > 0.0

    # lo: largest point on the same residual side as xi = 0;
    # hi: smallest point on the opposite side (None until a sign change)
    lo, r_lo = 0.0, r0
    hi: float | None = None
    r_hi = 0.0
    x = min(max(xi_init, 1e-8), 0.5 * CONSISTENCY_XI_CAP)
    r_x = R(x)
    iters = 0
    for _ in range(CONSISTENCY_MAX_ITER):
        iters += 1
        if abs(r_x) <= tol:
            return x, iters, evals, ops
        if (r_x > 0.0) == sign0:
            if x > lo:
                lo, r_lo = x, r_x
        elif hi is None or x < hi:
            hi, r_hi = x, r_x

        h = max(1e-8, 1e-6 * x)
        if x - h >= 0.0:
            drdx = (R(x + h) - R(x - h)) / (2.0 * h)
        else:
            drdx = (R(x + h) - r_x) / h
        x_new = x - r_x / drdx if drdx != 0.0 else math.inf
        inadmissible = (not math.isfinite(x_new) or x_new <= lo
                        or (hi is not None and x_new >= hi)
                        or (hi is None and x_new >= CONSISTENCY_XI_CAP))
        if inadmissible:
            if hi is not None:
                x_new = 0.5 * (lo + hi)
            else:
                x_new = 2.0 * max(lo, x)      # grow the bracket upper end
                if x_new > CONSISTENCY_XI_CAP:
                    raise StepFailure(
                        f"no consistency root below xi = {CONSISTENCY_XI_CAP}")
        if abs(x_new - x) <= CONSISTENCY_XTOL:
            return x_new, iters, evals, ops
        x = x_new
        r_x = R(x)
    raise StepFailure("consistency solve stagnated beyond "
                      f"{CONSISTENCY_MAX_ITER} iterations")


def solve_consistency(Cki_est, inp: StepInput,
                      xi_init: float) -> tuple[float, int]:
    """Solve the incremental consistency condition for xi with the
    substructure metrics frozen at ``Cki_est``.  Returns (xi, iterations)."""
    ws = corrector_workspace(inp, Cki_est)
    xi, iters, _, _ = _solve_consistency(ws, trial_overstress(inp), xi_init)
    return xi, iters


# ---------------------------------------------------------------------------
# PEBM
# ---------------------------------------------------------------------------

def pebm_step(inp: StepInput, relax_passes: int = 3,
              ci_correction: str = "unimodular",
              shift: str = "invariant") -> StepReport:
    """Partitioned Euler Backward step.

    Elastic predictor first; the plastic corrector estimates the inelastic
    metric by the invariant push-forward and the increment by the scalar
    predictor, then alternates explicit substructure updates with re-solves
    of the consistency condition for ``relax_passes`` passes (three by
    default).  The negative-control knobs ``ci_correction`` and ``shift``
    select intentionally non-equivariant variants for the invariance audit.
    """
    if not 1 <= relax_passes <= 10:
        raise DomainError("relax_passes must lie in 1..10")
    if ci_correction not in ("unimodular", "additive_identity"):
        raise DomainError(f"unknown ci_correction {ci_correction!r}")
    if shift not in ("invariant", "noninvariant"):
        raise DomainError(f"unknown shift {shift!r}")
    params, st = inp.params, inp.state_n
    f_trial = trial_overstress(inp)
    if f_trial <= 0.0:
        return _elastic_report(inp)

    if shift == "invariant":
        Ci_est = push_forward_estimate(st.Ci, inp.C_n, inp.C_np1)
    else:
        Ci_est = push_forward_estimate_noninvariant(st.Ci, inp.C_n, inp.C_np1)
    xi_est = rough_xi_estimate(f_trial, inp.dt, params)

    n_ch = len(params.channels)
    newton_total = 0
    evals_total = 0
    # predictor: driving-force products, push-forward roots, commit stress
    ops_total = 2 * (1 + n_ch) + 8 + 4
    Cki_est = st.Cki
    for _ in range(relax_passes):
        Cki_est = tuple(
            update_cki_explicit(Ck_n, Ci_est, xi_est, ch.c, ch.kappa)
            for ch, Ck_n in zip(params.channels, st.Cki))
        ws = corrector_workspace(inp, Cki_est, ci_correction)
        xi_est, iters, evals, ops = _solve_consistency(ws, f_trial, xi_est)
        newton_total += iters
        evals_total += evals
        ops_total += ops + _workspace_ops(ws) + _consistency_eval_ops(ws, xi_est)
        Ci_est = solve_ci_closed_form(ws, xi_est)

    s_new, s_d_new = update_s_sd(xi_est, st.s, st.s_d, params)
    state_new = MaterialState(Ci=Ci_est, Cki=Cki_est, s=s_new, s_d=s_d_new)
    T = pk2_stress(inp.C_np1, Ci_est, params)
    return StepReport(state_np1=state_new, xi=xi_est, pk2=T,
                      newton_iterations_total=newton_total,
                      relaxation_passes=relax_passes, subincrements_used=0,
                      elastic=(xi_est == 0.0),
                      residual_evaluations_total=evals_total,
                      matrix_ops_estimate=ops_total)


# ---------------------------------------------------------------------------
# EBMSC and EM baselines: coupled 6(1+N)-dimensional solve per xi
# ---------------------------------------------------------------------------

_DIAG = (0, 1, 2)
_OFF_R = (0, 0, 1)
_OFF_C = (1, 2, 2)


def _pack(tensors) -> np.ndarray:
    """Stack symmetric tensors [(3,3), ...] into one coordinate vector."""
    out = np.empty(6 * len(tensors))
    for i, A in enumerate(tensors):
        out[6 * i:6 * i + 3] = A[_DIAG, _DIAG]
        out[6 * i + 3:6 * i + 6] = A[_OFF_R, _OFF_C]
    return out


def _pack_cols(n_tensors: int) -> np.ndarray:
    cols = []
    for i in range(n_tensors):
        base = 9 * i
        cols += [base + 0, base + 4, base + 8, base + 1, base + 2, base + 5]
    return np.array(cols)


_PACK_COLS = {n: _pack_cols(n) for n in range(1, 8)}
# scatter of the 6 coordinates into the 9 slots of a row-major 3x3
_UNPACK_ROWS = {n: np.concatenate(
    [9 * i + np.array([0, 4, 8, 1, 2, 5, 3, 6, 7]) for i in range(n)])
    for n in range(1, 8)}
_UNPACK_COLS = {n: np.concatenate(
    [6 * i + np.array([0, 1, 2, 3, 4, 5, 3, 4, 5]) for i in range(n)])
    for n in range(1, 8)}


def _unpack(x: np.ndarray, n_tensors: int) -> np.ndarray:
    """Rebuild (..., n_tensors, 3, 3) symmetric tensors from coordinates."""
    flat = np.empty(x.shape[:-1] + (9 * n_tensors,))
    flat[..., _UNPACK_ROWS[n_tensors]] = x[..., _UNPACK_COLS[n_tensors]]
    return flat.reshape(x.shape[:-1] + (n_tensors, 3, 3))


class _InnerDivergence(Exception):
    pass


def _baseline_residual_ops(n_channels: int, method: str) -> int:
    """3x3 matrix operations of one coupled-residual evaluation (per row)."""
    if method == "ebmsc":
        return (1 + n_channels) + 2 * n_channels
    return 4 * (1 + n_channels)       # exponential map: inverses, exps, products


def _baseline_iter_ops(n_channels: int, method: str) -> int:
    """Cost of one inner Newton iteration: finite-difference Jacobian rows,
    the dense solve in 3x3-multiply flop equivalents, and the check residual."""
    n_eq = 6 * (1 + n_channels)
    res = _baseline_residual_ops(n_channels, method)
    solve = int(round((2.0 / 3.0) * n_eq ** 3 / 54.0))
    return (n_eq + 1) * res + solve + res


@dataclass(frozen=True)
class _StepContext:
    """Per-step constants shared by all inner residual evaluations."""
    C_hat: np.ndarray
    Ci_n: np.ndarray
    Cki_n: tuple[np.ndarray, ...]
    params: MaterialParams
    n_t: int


def _coupled_residual(x: np.ndarray, ctx: _StepContext, xi: float, F2: float,
                      method: str) -> np.ndarray:
    """Batched residual of the implicit coupled system at fixed xi.

    ``x`` has shape (B, 6*(1+N)); rows hold the symmetric coordinates of
    (Ci, C1i, ..., CNi) at t_{n+1}.
    """
    params = ctx.params
    n_t = ctx.n_t
    T = _unpack(x, n_t)                       # (B, n_t, 3, 3)
    B_sz = T.shape[0]
    T_inv = np.linalg.inv(T.reshape(-1, 3, 3)).reshape(B_sz, n_t, 3, 3)
    Ci, Ci_inv = T[:, 0], T_inv[:, 0]
    coef = 2.0 * xi / F2

    res = np.empty_like(T)
    if method == "ebmsc":
        tr_e = np.einsum("ij,bji->b", ctx.C_hat, Ci_inv) / 3.0
        flow = params.mu * (ctx.C_hat[None] - tr_e[:, None, None] * Ci)
        for k, ch in enumerate(params.channels):
            prod = Ci @ T_inv[:, k + 1]
            tr_k = np.einsum("bii->b", prod) / 3.0
            flow = flow - 0.5 * ch.c * (prod @ Ci - tr_k[:, None, None] * Ci)
            res[:, k + 1] = (T[:, k + 1]
                             - (xi * ch.kappa * ch.c)
                             * (Ci - tr_k[:, None, None] * T[:, k + 1])
                             - ctx.Cki_n[k])
        res[:, 0] = Ci - coef * flow - ctx.Ci_n
    else:                                     # exponential map
        # wandering Newton iterates can overflow the exponential; the solver
        # treats the resulting non-finite residual as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            G = params.mu * (ctx.C_hat[None] @ Ci_inv)
            for k, ch in enumerate(params.channels):
                G = G - 0.5 * ch.c * (Ci @ T_inv[:, k + 1])
            G = dev(G) * coef
            res[:, 0] = Ci - matrix_exp(G) @ ctx.Ci_n
            for k, ch in enumerate(params.channels):
                Gk = dev(Ci @ T_inv[:, k + 1]) * (xi * ch.kappa * ch.c)
                res[:, k + 1] = T[:, k + 1] - matrix_exp(Gk) @ ctx.Cki_n[k]
            res[:] = 0.5 * (res + np.swapaxes(res, -1, -2))
    return res.reshape(B_sz, n_t * 9)[:, _PACK_COLS[n_t]]


def _solve_coupled(ctx: _StepContext, dt: float, s_n: float, s_d_n: float,
                   xi: float, x0: np.ndarray,
                   method: str) -> tuple[np.ndarray, int]:
    """Newton with a forward-difference Jacobian on the coupled system.

    Raises :class:`_InnerDivergence` on non-finite residuals, singular
    Jacobians, or repeated residual growth, which triggers subincrementation
    in the caller.
    """
    F2 = f2_driving_force(xi, dt, s_n, s_d_n, ctx.params)
    n = x0.size
    scale = max(1.0, float(np.linalg.norm(x0)))
    target = INNER_TARGET_RTOL * scale
    accept = INNER_ACCEPT_RTOL * scale
    x = x0.copy()
    r = _coupled_residual(x[None], ctx, xi, F2, method)[0]
    rnorm = float(np.linalg.norm(r))
    growth = 0
    for it in range(1, INNER_MAX_ITER + 1):
        if not math.isfinite(rnorm):
            raise _InnerDivergence
        if rnorm <= target:
            return x, it - 1
        h = 1e-7 * (1.0 + np.abs(x))
        X = np.repeat(x[None], n + 1, axis=0)
        X[1:] += np.diag(h)
        R = _coupled_residual(X, ctx, xi, F2, method)
        J = ((R[1:] - R[0]) / h[:, None]).T
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as err:
            raise _InnerDivergence from err
        x_new = x + dx
        r_new = _coupled_residual(x_new[None], ctx, xi, F2, method)[0]
        rnorm_new = float(np.linalg.norm(r_new))
        if not math.isfinite(rnorm_new):
            raise _InnerDivergence
        if rnorm_new > rnorm and rnorm_new > accept:
            growth += 1
            if growth >= INNER_GROWTH_LIMIT:
                raise _InnerDivergence
        else:
            growth = 0
        x, r, rnorm = x_new, r_new, rnorm_new
    if rnorm <= accept:
        return x, INNER_MAX_ITER
    raise _InnerDivergence


def _xi_step(ctx: _StepContext, inp: StepInput, xi: float, x_init: np.ndarray,
             method: str, max_subincrements: int) -> tuple[np.ndarray, int, int]:
    """Solve the coupled system at the full increment xi.

    If the straight Newton solve diverges, the [0, xi] interval is ramped in
    a doubling number of continuation stages; every stage solves the full
    implicit system at an intermediate increment, so the converged solution
    at xi itself is unchanged and subincrementation is purely a robustness
    device.
    """
    st = inp.state_n
    stages = 1
    while True:
        x = x_init.copy()
        iters = 0
        try:
            for j in range(1, stages + 1):
                x, it = _solve_coupled(ctx, inp.dt, st.s, st.s_d,
                                       xi * j / stages, x, method)
                iters += it
            return x, iters, stages
        except _InnerDivergence:
            stages *= 2
            if stages > max_subincrements:
                raise StepFailure(
                    f"{method} inner solve diverged even with "
                    f"{max_subincrements} subincrements") from None


def _baseline_step(inp: StepInput, method: str, max_subincrements: int,
                   xi_hint: float | None = None) -> StepReport:
    params, st = inp.params, inp.state_n
    f_trial = trial_overstress(inp)
    if f_trial <= 0.0:
        return _elastic_report(inp)

    n_ch = len(params.channels)
    n_t = 1 + n_ch
    ctx = _StepContext(C_hat=unimodular(inp.C_np1), Ci_n=st.Ci,
                       Cki_n=st.Cki, params=params, n_t=n_t)
    x_warm = _pack((st.Ci,) + st.Cki)
    tol = CONSISTENCY_RTOL * max(1.0, f_trial)
    inner_total = 0
    sub_used = 0
    iter_ops = _baseline_iter_ops(n_ch, method)
    res_ops = _baseline_residual_ops(n_ch, method)
    # predictor products and commit stress
    ops_total = 2 * (1 + n_ch) + 4

    def xi_residual(xi, x_start):
        nonlocal inner_total, sub_used, ops_total
        x_sol, iters, stages = _xi_step(ctx, inp, xi, x_start, method,
                                        max_subincrements)
        inner_total += iters
        sub_used = max(sub_used, stages)
        # per xi-step: Newton iterations, entry residuals of each stage, and
        # the corrected-tensor overstress evaluation
        ops_total += iters * iter_ops + stages * res_ops + 2 * n_t
        T = _unpack(x_sol, n_t)
        if method == "ebmsc":
            d = np.linalg.det(T)
            T = T * (d ** (-1.0 / 3.0))[:, None, None]
        invs = np.linalg.inv(T)
        Ci, Cki = T[0], tuple(T[1:])
        Xi = params.mu * (ctx.C_hat @ invs[0])
        for ch, Ck_inv in zip(params.channels, invs[1:]):
            Xi = Xi - (0.5 * ch.c) * (Ci @ Ck_inv)
        t = (Xi[0, 0] + Xi[1, 1] + Xi[2, 2]) / 3.0
        Xi[0, 0] -= t
        Xi[1, 1] -= t
        Xi[2, 2] -= t
        F1 = math.sqrt(max(float(np.einsum("ij,ji->", Xi, Xi)), 0.0))
        f = F1 - SQ23 * (params.K + hardening_R(xi, st.s, st.s_d, params))
        if params.eta == 0.0:
            r = f
        else:
            flow = (f / F0) ** params.m if f > 0.0 else 0.0
            r = xi * params.eta - inp.dt * flow
        return r, x_sol, (Ci, Cki)

    # residual at xi = 0 is known analytically (tensors equal the old state)
    r0 = f_trial if params.eta == 0.0 else -inp.dt * (f_trial / F0) ** params.m
    x0 = xi_hint if xi_hint and xi_hint > 0.0 else \
        rough_xi_estimate(f_trial, inp.dt, params)
    x0 = min(max(x0, 1e-8), CONSISTENCY_XI_CAP)

    # expand from (0, r0) through secant-guided points until a sign change
    lo, r_lo = 0.0, r0
    hi, outer = x0, 0
    for _ in range(CONSISTENCY_MAX_ITER):
        outer += 1
        r_hi, x_warm, tensors = xi_residual(hi, x_warm)
        best = (hi, tensors)
        if abs(r_hi) <= tol:
            xi_sol, (Ci, Cki) = best
            break
        if (r_hi > 0.0) != (r_lo > 0.0):
            xi_sol = None
            break
        # secant extrapolation, capped at a doubling
        denom = r_hi - r_lo
        guess = hi - r_hi * (hi - lo) / denom if denom != 0.0 else 2.0 * hi
        lo, r_lo = hi, r_hi
        hi = min(guess, 2.0 * hi) if guess > hi else 2.0 * hi
        if hi > CONSISTENCY_XI_CAP:
            raise StepFailure(f"no {method} consistency root below "
                              f"{CONSISTENCY_XI_CAP}")
    else:
        raise StepFailure(f"{method} consistency bracket search stagnated")

    if xi_sol is None:
        # secant inside the bracket, bisection fallback
        a, r_a = lo, r_lo
        b, r_b = hi, r_hi
        x_prev, r_prev = a, r_a
        x_cur, r_cur = b, r_b
        for _ in range(CONSISTENCY_MAX_ITER):
            outer += 1
            denom = r_cur - r_prev
            x_new = (x_cur - r_cur * (x_cur - x_prev) / denom
                     if denom != 0.0 else 0.5 * (a + b))
            if not (a < x_new < b) or not math.isfinite(x_new):
                x_new = 0.5 * (a + b)
            r_new, x_warm, tensors = xi_residual(x_new, x_warm)
            best = (x_new, tensors)
            if abs(r_new) <= tol or abs(x_new - x_cur) <= CONSISTENCY_XTOL:
                break
            if (r_new > 0.0) == (r_a > 0.0):
                a, r_a = x_new, r_new
            else:
                b, r_b = x_new, r_new
            x_prev, r_prev = x_cur, r_cur
            x_cur, r_cur = x_new, r_new
        else:
            raise StepFailure(f"{method} consistency solve stagnated")
        xi_sol, (Ci, Cki) = best

    s_new, s_d_new = update_s_sd(xi_sol, st.s, st.s_d, params)
    state_new = MaterialState(Ci=Ci, Cki=Cki, s=s_new, s_d=s_d_new)
    T = pk2_stress(inp.C_np1, Ci, params)
    return StepReport(state_np1=state_new, xi=xi_sol, pk2=T,
                      newton_iterations_total=outer,
                      relaxation_passes=0, subincrements_used=sub_used,
                      elastic=(xi_sol == 0.0),
                      inner_newton_iterations_total=inner_total,
                      residual_evaluations_total=outer,
                      matrix_ops_estimate=ops_total)


def ebmsc_step(inp: StepInput, max_subincrements: int = 256,
               xi_hint: float | None = None) -> StepReport:
    """Euler Backward step on the coupled tensor system with a subsequent
    unit-determinant correction of every internal tensor.

    ``xi_hint`` optionally seeds the outer scalar solve (e.g. with the
    increment committed by the previous step of a trajectory); it affects
    only the iteration count, never the converged result.
    """
    return _baseline_step(inp, "ebmsc", max_subincrements, xi_hint)


def em_step(inp: StepInput, max_subincrements: int = 256,
            xi_hint: float | None = None) -> StepReport:
    """Exponential-map step on the coupled tensor system; the trace-free
    generators preserve unit determinants without correction."""
    return _baseline_step(inp, "em", max_subincrements, xi_hint)
