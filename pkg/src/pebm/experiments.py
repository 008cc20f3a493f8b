"""Desk-scale numerical experiments: trajectory drivers, error-convergence
studies, iso-error and iteration-count maps, the reference-change invariance
audit, and the round-off study of the corrector root expression.

Grid cells and random trials are independent; results are reduced into
index-ordered containers so emitted files are deterministic regardless of
scheduling.  ``PEBM_THREADS`` caps the worker count (0 or unset = auto).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .integrators import (StepFailure, StepInput, StepReport, ebmsc_step,
                          em_step, naive_y_form, pebm_step, stable_y_form)
from .loading import ConfigError, DeformationProgram, isoerror_deformation, sample
from .material import (MaterialParams, MaterialState, cauchy_stress,
                       pk2_stress, virgin_state)
from .tensor import frob_norm, sym, unimodular

__all__ = [
    "INTEGRATORS",
    "Trajectory",
    "ErrorSeries",
    "GridSpec",
    "IsoErrorGrid",
    "IterationCountGrid",
    "AuditReport",
    "RoundoffReport",
    "simulate_program",
    "reference_trajectory",
    "convergence_study",
    "subincremented_step_oracle",
    "isoerror_params",
    "isoerror_map",
    "isoerror_maps",
    "iteration_count_map",
    "weak_invariance_audit",
    "roundoff_study",
    "pebm_step_cost",
    "baseline_step_cost",
    "worker_count",
]

INTEGRATORS = ("pebm", "ebmsc", "em")

# reference settings for the single-step oracle and the trajectory reference
ORACLE_SUBSTEPS = 300
REFERENCE_DT = 0.0025

# yield-radius overrides of the iso-error studies (isotropic hardening is
# switched off and mimicked by an enlarged initial radius)
ISOERROR_K = {"aa5754o": 178.8, "42crmo4": 400.0}


def worker_count() -> int:
    """Resolve the worker cap from PEBM_THREADS (0 or unset = auto)."""
    raw = os.environ.get("PEBM_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PEBM_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError("PEBM_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# trajectory drivers
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Node-wise results of a driven material-point simulation."""
    label: str
    times: np.ndarray                    # (n+1,)
    cauchy: np.ndarray                   # (n+1, 3, 3)
    xi: np.ndarray                       # (n+1,)
    newton: np.ndarray                   # (n+1,) int
    inner_newton: np.ndarray             # (n+1,) int
    det_ci: np.ndarray                   # (n+1,)
    s: np.ndarray
    s_d: np.ndarray
    states: list[MaterialState] | None = None
    failure: str | None = None           # set when truncated by a failed step

    def stress_at(self, t: float) -> np.ndarray:
        j = int(round(float(t) / (self.times[1] - self.times[0])))
        if not math.isclose(self.times[j], t, rel_tol=0.0, abs_tol=1e-9):
            raise KeyError(f"t = {t} is not a node of this trajectory")
        return self.cauchy[j]


def _stepper(integrator: str, relax_passes: int, max_subincrements: int):
    if integrator == "pebm":
        def step(inp, xi_hint=None):
            return pebm_step(inp, relax_passes=relax_passes)
    elif integrator == "ebmsc":
        def step(inp, xi_hint=None):
            return ebmsc_step(inp, max_subincrements, xi_hint)
    elif integrator == "em":
        def step(inp, xi_hint=None):
            return em_step(inp, max_subincrements, xi_hint)
    else:
        raise ConfigError(f"unknown integrator {integrator!r}; "
                          f"choose one of {INTEGRATORS}")
    return step


def simulate_program(program: DeformationProgram, params: MaterialParams,
                     n_steps: int, integrator: str = "pebm",
                     relax_passes: int = 3, max_subincrements: int = 256,
                     keep_states: bool = False,
                     initial_state: MaterialState | None = None,
                     partial_on_failure: bool = False) -> Trajectory:
    """Integrate a deformation program with uniform steps.

    Any step failure aborts with a :class:`StepFailure` carrying the step
    index and time; with ``partial_on_failure`` the completed nodes are
    returned instead, with the failure message recorded on the trajectory.
    """
    nodes = sample(program, n_steps)
    dt = program.duration / n_steps
    step = _stepper(integrator, relax_passes, max_subincrements)
    st = initial_state if initial_state is not None else virgin_state(params)

    n = len(nodes) - 1
    times = np.array([t for t, _ in nodes])
    cauchy = np.zeros((n + 1, 3, 3))
    xi = np.zeros(n + 1)
    newton = np.zeros(n + 1, dtype=int)
    inner = np.zeros(n + 1, dtype=int)
    det_ci = np.zeros(n + 1)
    s_arr = np.zeros(n + 1)
    sd_arr = np.zeros(n + 1)
    states = [st] if keep_states else None

    cauchy[0] = cauchy_stress(program.F(0.0), pk2_stress(nodes[0][1], st.Ci, params))
    det_ci[0] = float(np.linalg.det(st.Ci))
    s_arr[0], sd_arr[0] = st.s, st.s_d

    xi_prev = None
    failure = None
    for j in range(n):
        t_b, C_b = nodes[j + 1]
        inp = StepInput(C_n=nodes[j][1], C_np1=C_b, dt=dt, state_n=st,
                        params=params)
        try:
            rep = step(inp, xi_hint=xi_prev)
        except StepFailure as err:
            failure = (f"{integrator} failed at step {j + 1} "
                       f"(t = {t_b:g} s): {err}")
            if not partial_on_failure:
                raise StepFailure(failure) from err
            n = j
            break
        st = rep.state_np1
        xi_prev = rep.xi if rep.xi > 0.0 else None
        cauchy[j + 1] = cauchy_stress(program.F(t_b), rep.pk2)
        xi[j + 1] = rep.xi
        newton[j + 1] = rep.newton_iterations_total
        inner[j + 1] = rep.inner_newton_iterations_total
        det_ci[j + 1] = float(np.linalg.det(st.Ci))
        s_arr[j + 1], sd_arr[j + 1] = st.s, st.s_d
        if keep_states:
            states.append(st)
    end = n + 1
    return Trajectory(label=f"{integrator}(dt={dt:g})", times=times[:end],
                      cauchy=cauchy[:end], xi=xi[:end], newton=newton[:end],
                      inner_newton=inner[:end], det_ci=det_ci[:end],
                      s=s_arr[:end], s_d=sd_arr[:end], states=states,
                      failure=failure)


def reference_trajectory(program: DeformationProgram, params: MaterialParams,
                         n_steps: int,
                         keep_states: bool = False) -> Trajectory:
    """Ground-truth trajectory: the coupled-solve integrator with subsequent
    determinant correction at a very small step size."""
    return simulate_program(program, params, n_steps, integrator="ebmsc",
                            keep_states=keep_states)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

@dataclass
class ErrorSeries:
    """Stress error over time for one (integrator, dt) pair, evaluated on the
    node grid common to every run of the study."""
    integrator: str
    dt: float
    times: np.ndarray
    errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(self.errors.max())


def _common_times(times_list: Sequence[np.ndarray]) -> np.ndarray:
    common = None
    for times in times_list:
        keys = set(np.round(times, 9))
        common = keys if common is None else (common & keys)
    return np.array(sorted(common))


def convergence_study(program: DeformationProgram, params: MaterialParams,
                      dt_list: Sequence[float],
                      integrators: Sequence[str] = INTEGRATORS,
                      reference: Trajectory | None = None,
                      reference_dt: float = REFERENCE_DT,
                      ) -> list[ErrorSeries]:
    """Error-vs-time series against the fine reference.

    Errors are evaluated at the nodes common to all runs of the study (the
    coarsest grid), where every trajectory has a committed value.
    """
    if reference is None:
        reference = reference_trajectory(
            program, params, int(round(program.duration / reference_dt)))
    runs = {}
    for integ in integrators:
        for dt in dt_list:
            n = int(round(program.duration / dt))
            if abs(n * dt - program.duration) > 1e-9 * program.duration:
                raise ConfigError(f"dt = {dt} does not divide the program "
                                  f"duration {program.duration}")
            runs[(integ, dt)] = simulate_program(program, params, n, integ)

    common = _common_times([tr.times for tr in runs.values()]
                           + [reference.times])
    ref_idx = {round(float(t), 9): j for j, t in enumerate(reference.times)}
    out = []
    for (integ, dt), tr in runs.items():
        idx = {round(float(t), 9): j for j, t in enumerate(tr.times)}
        errs = np.array([
            frob_norm(tr.cauchy[idx[t]] - reference.cauchy[ref_idx[t]])
            for t in common])
        out.append(ErrorSeries(integrator=integ, dt=dt, times=common.copy(),
                               errors=errs))
    return out


def loglog_slope(dts: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(dt)."""
    return float(np.polyfit(np.log(np.asarray(dts, dtype=float)),
                            np.log(np.asarray(errors, dtype=float)), 1)[0])


# ---------------------------------------------------------------------------
# single-step oracle and iso-error maps
# ---------------------------------------------------------------------------

def subincremented_step_oracle(F_path: Callable[[float], np.ndarray],
                               state: MaterialState, params: MaterialParams,
                               dt: float, n_sub: int = ORACLE_SUBSTEPS,
                               ) -> tuple[np.ndarray, MaterialState]:
    """Near-exact solution of one step: refine the path tau in [0, 1] into
    ``n_sub`` sub-steps of the determinant-corrected coupled-solve integrator.

    Returns the Cauchy stress at the end of the path and the final state.
    """
    st = state
    xi_prev = None
    F_a = F_path(0.0)
    C_a = sym(F_a.T @ F_a)
    for j in range(n_sub):
        F_b = F_path((j + 1) / n_sub)
        C_b = sym(F_b.T @ F_b)
        rep = ebmsc_step(StepInput(C_n=C_a, C_np1=C_b, dt=dt / n_sub,
                                   state_n=st, params=params),
                         xi_hint=xi_prev)
        st = rep.state_np1
        xi_prev = rep.xi if rep.xi > 0.0 else None
        C_a = C_b
    T = cauchy_stress(F_path(1.0), pk2_stress(C_a, st.Ci, params))
    return T, st


def isoerror_params(base: MaterialParams, k_override: float | None = None
                    ) -> MaterialParams:
    """Rate-independent, isotropic-hardening-free material for the iso-error
    studies: gamma = 0, viscosity off, and the yield radius raised to mimic
    the hardened state (bundled cards carry their published override)."""
    if k_override is None:
        k_override = ISOERROR_K.get(base.name)
        if k_override is None:
            raise ConfigError(
                f"no bundled yield-radius override for card {base.name!r}; "
                "pass k_override explicitly")
    return base.with_overrides(gamma=0.0, eta=0.0, m=1.0, K=float(k_override))


@dataclass(frozen=True)
class GridSpec:
    """Square grid of strain increments around the prestrain endpoint."""
    n: int = 25
    span: float = 0.06

    def offsets(self) -> np.ndarray:
        if self.n < 1:
            raise ConfigError("grid size must be >= 1")
        if self.n == 1:
            return np.array([0.0])
        return np.linspace(-self.span, self.span, self.n)


@dataclass
class IsoErrorGrid:
    kind: str
    integrator: str
    f11_values: np.ndarray
    f12_values: np.ndarray
    errors: np.ndarray                  # (n_f11, n_f12), NaN where invalid
    failures: list[str] = field(default_factory=list)


@dataclass
class IterationCountGrid:
    kind: str
    integrator: str
    f11_values: np.ndarray
    f12_values: np.ndarray
    newton: np.ndarray                  # (n_f11, n_f12), -1 where failed
    inner_newton: np.ndarray
    cost: np.ndarray                    # 3x3-matrix-operation equivalents
    failures: list[str] = field(default_factory=list)


_PRESTRAIN_END = {"tension": (1.2, 0.0), "tension_shear": (1.1, 0.1)}
PRESTRAIN_STEPS = 500


def _prestrain_state(kind: str, params: MaterialParams) -> MaterialState:
    from .loading import isoerror_prestrain
    prog = isoerror_prestrain(kind)
    tr = simulate_program(prog, params, PRESTRAIN_STEPS, integrator="ebmsc",
                          keep_states=True)
    return tr.states[-1]


# the integrators account their own 3x3 matrix operations (multiplications,
# inversions, factorisations; dense solves in 3x3-multiply equivalents)
def pebm_step_cost(report: StepReport, n_channels: int | None = None) -> int:
    """Matrix-operation cost of one partitioned step."""
    return report.matrix_ops_estimate


def baseline_step_cost(report: StepReport, n_channels: int | None = None) -> int:
    """Matrix-operation cost of one coupled-solve step."""
    return report.matrix_ops_estimate


def _grid_cells(kind: str, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    f11_end, f12_end = _PRESTRAIN_END[kind]
    return f11_end + spec.offsets(), f12_end + spec.offsets()


def _cell_targets(kind: str, spec: GridSpec) -> list[tuple[int, int, float, float]]:
    f11s, f12s = _grid_cells(kind, spec)
    return [(i, j, float(f11), float(f12))
            for i, f11 in enumerate(f11s) for j, f12 in enumerate(f12s)]


def _isoerror_cell(args):
    """Evaluate one grid cell: a single step by each requested integrator
    plus the refined oracle, all from the shared prestrained state."""
    (kind, i, j, f11, f12, state, params, integrators, relax_passes,
     max_subincrements, with_oracle) = args
    f11_end, f12_end = _PRESTRAIN_END[kind]
    F_start = isoerror_deformation(f11_end, f12_end)
    F_target = isoerror_deformation(f11, f12)
    C_start = sym(F_start.T @ F_start)
    C_target = sym(F_target.T @ F_target)
    inp = StepInput(C_n=C_start, C_np1=C_target, dt=1.0, state_n=state,
                    params=params)

    oracle_T = None
    if with_oracle:
        def path(tau):
            return isoerror_deformation(f11_end + tau * (f11 - f11_end),
                                        f12_end + tau * (f12 - f12_end))
        oracle_T, _ = subincremented_step_oracle(path, state, params, dt=1.0)

    out = {}
    for integ in integrators:
        step = _stepper(integ, relax_passes, max_subincrements)
        try:
            rep = step(inp)
            T = cauchy_stress(F_target, rep.pk2)
            err = frob_norm(T - oracle_T) if with_oracle else math.nan
            out[integ] = (err, rep.newton_iterations_total,
                          rep.inner_newton_iterations_total,
                          pebm_step_cost(rep, len(params.channels))
                          if integ == "pebm"
                          else baseline_step_cost(rep, len(params.channels)),
                          None)
        except StepFailure as exc:
            out[integ] = (math.nan, -1, -1, 0, str(exc))
    return i, j, out


def _run_cells(tasks, workers: int):
    if workers > 1 and len(tasks) > 8:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_isoerror_cell, tasks, chunksize=8))
    return [_isoerror_cell(t) for t in tasks]


def isoerror_maps(kind: str, params: MaterialParams,
                  spec: GridSpec = GridSpec(),
                  integrators: Sequence[str] = INTEGRATORS,
                  relax_passes: int = 3, max_subincrements: int = 256,
                  with_oracle: bool = True,
                  state: MaterialState | None = None,
                  ) -> dict[str, IsoErrorGrid]:
    """Single-step error maps for several integrators over one grid, sharing
    the prestrain and the per-cell oracle."""
    if kind not in _PRESTRAIN_END:
        raise ConfigError(f"unknown prestrain kind {kind!r}")
    if state is None:
        state = _prestrain_state(kind, params)
    f11s, f12s = _grid_cells(kind, spec)
    tasks = [(kind, i, j, f11, f12, state, params, tuple(integrators),
              relax_passes, max_subincrements, with_oracle)
             for i, j, f11, f12 in _cell_targets(kind, spec)]
    results = _run_cells(tasks, worker_count())

    grids = {integ: IsoErrorGrid(kind=kind, integrator=integ,
                                 f11_values=f11s.copy(),
                                 f12_values=f12s.copy(),
                                 errors=np.full((len(f11s), len(f12s)),
                                                np.nan))
             for integ in integrators}
    for i, j, out in results:
        for integ, (err, _, _, _, failure) in out.items():
            grids[integ].errors[i, j] = err
            if failure is not None:
                grids[integ].failures.append(
                    f"cell ({f11s[i]:.6g}, {f12s[j]:.6g}): {failure}")
    return grids


def isoerror_map(kind: str, params: MaterialParams,
                 spec: GridSpec = GridSpec(),
                 integrator: str = "pebm", **kwargs) -> IsoErrorGrid:
    """Single-integrator convenience wrapper around :func:`isoerror_maps`."""
    return isoerror_maps(kind, params, spec, integrators=(integrator,),
                         **kwargs)[integrator]


def iteration_count_map(kind: str, params: MaterialParams,
                        spec: GridSpec = GridSpec(),
                        integrators: Sequence[str] = INTEGRATORS,
                        relax_passes: int = 3, max_subincrements: int = 256,
                        state: MaterialState | None = None,
                        ) -> dict[str, IterationCountGrid]:
    """Newton-effort maps over the same grid as the iso-error study: the
    partitioned method's accumulated scalar iterations, the baselines' outer
    iterations, and the inner coupled-solve iterations as a cost weight."""
    if kind not in _PRESTRAIN_END:
        raise ConfigError(f"unknown prestrain kind {kind!r}")
    if state is None:
        state = _prestrain_state(kind, params)
    f11s, f12s = _grid_cells(kind, spec)
    tasks = [(kind, i, j, f11, f12, state, params, tuple(integrators),
              relax_passes, max_subincrements, False)
             for i, j, f11, f12 in _cell_targets(kind, spec)]
    results = _run_cells(tasks, worker_count())

    shape = (len(f11s), len(f12s))
    grids = {integ: IterationCountGrid(kind=kind, integrator=integ,
                                       f11_values=f11s.copy(),
                                       f12_values=f12s.copy(),
                                       newton=np.zeros(shape, dtype=int),
                                       inner_newton=np.zeros(shape, dtype=int),
                                       cost=np.zeros(shape))
             for integ in integrators}
    for i, j, out in results:
        for integ, (_, newton, inner, cost, failure) in out.items():
            g = grids[integ]
            g.newton[i, j] = newton
            g.inner_newton[i, j] = max(inner, 0)
            g.cost[i, j] = cost
            if failure is not None:
                g.failures.append(
                    f"cell ({f11s[i]:.6g}, {f12s[j]:.6g}): {failure}")
    return grids


# ---------------------------------------------------------------------------
# reference-change invariance audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    seed: int
    n_steps: int
    control_n_steps: int
    stress_deviations: list[float]
    internal_deviations: list[float]
    f0_determinants: list[float]
    control_additive: float
    control_shift: float

    @property
    def max_stress_deviation(self) -> float:
        return max(self.stress_deviations)

    @property
    def max_internal_deviation(self) -> float:
        return max(self.internal_deviations)


def _draw_unimodular(rng: np.random.Generator) -> np.ndarray:
    while True:
        M = np.eye(3) + rng.uniform(-1.0, 1.0, size=(3, 3))
        if np.linalg.det(M) > 0.05:
            return unimodular(M)


def _transformed_run(nodes, F_of_t, dt, params, F0, relax_passes,
                     ci_correction, shift):
    """Integrate the reference-changed problem and return Cauchy stresses and
    inelastic metrics at the nodes."""
    F0_inv = np.linalg.inv(F0)
    st = MaterialState(Ci=sym(F0_inv.T @ F0_inv),
                       Cki=tuple(sym(F0_inv.T @ F0_inv)
                                 for _ in params.channels))
    C_new = [sym(F0_inv.T @ C @ F0_inv) for _, C in nodes]
    cauchy = [cauchy_stress(F_of_t(nodes[0][0]) @ F0_inv,
                            pk2_stress(C_new[0], st.Ci, params))]
    metrics = [st.Ci]
    for j in range(len(nodes) - 1):
        inp = StepInput(C_n=C_new[j], C_np1=C_new[j + 1], dt=dt, state_n=st,
                        params=params)
        rep = pebm_step(inp, relax_passes=relax_passes,
                        ci_correction=ci_correction, shift=shift)
        st = rep.state_np1
        cauchy.append(cauchy_stress(F_of_t(nodes[j + 1][0]) @ F0_inv, rep.pk2))
        metrics.append(st.Ci)
    return cauchy, metrics


def _base_run(nodes, F_of_t, dt, params, relax_passes, ci_correction, shift):
    st = virgin_state(params)
    cauchy = [cauchy_stress(F_of_t(nodes[0][0]),
                            pk2_stress(nodes[0][1], st.Ci, params))]
    metrics = [st.Ci]
    for j in range(len(nodes) - 1):
        inp = StepInput(C_n=nodes[j][1], C_np1=nodes[j + 1][1], dt=dt,
                        state_n=st, params=params)
        rep = pebm_step(inp, relax_passes=relax_passes,
                        ci_correction=ci_correction, shift=shift)
        st = rep.state_np1
        cauchy.append(cauchy_stress(F_of_t(nodes[j + 1][0]), rep.pk2))
        metrics.append(st.Ci)
    return cauchy, metrics


def _deviations(base, transformed, F0):
    cauchy_b, metrics_b = base
    cauchy_t, metrics_t = transformed
    F0_inv = np.linalg.inv(F0)
    scale_T = max(frob_norm(T) for T in cauchy_b)
    scale_C = max(frob_norm(C) for C in metrics_b)
    dev_T = max(frob_norm(Tt - Tb) for Tt, Tb in zip(cauchy_t, cauchy_b))
    dev_C = max(frob_norm(Ct - sym(F0_inv.T @ Cb @ F0_inv))
                for Ct, Cb in zip(metrics_t, metrics_b))
    return dev_T / scale_T, dev_C / scale_C


def weak_invariance_audit(program: DeformationProgram,
                          params: MaterialParams, n_steps: int,
                          n_random_F0: int = 10, seed: int = 0,
                          relax_passes: int = 3,
                          n_control_F0: int = 2,
                          control_n_steps: int = 30,
                          f0_list: Sequence[np.ndarray] | None = None
                          ) -> AuditReport:
    """Compare the partitioned integrator's response before and after random
    unit-determinant changes of the reference configuration.

    The Cauchy stresses must coincide and the inelastic metrics must follow
    the congruence transformation.  Two intentionally non-equivariant
    variants of the algorithm (diagonal-shift determinant correction and the
    naive strain-root shift) are run as negative controls and must produce
    detectable violations; they use a coarse discretisation of the same
    program (``control_n_steps``), since the replaced ingredients only carry
    weight for large strain increments -- relaxation contracts the initial
    estimate's footprint away at fine steps.  ``f0_list`` overrides the
    random draws.
    """
    nodes = sample(program, n_steps)
    dt = program.duration / n_steps
    rng = np.random.default_rng(seed)
    if f0_list is not None:
        F0s = [np.asarray(F0, dtype=float) for F0 in f0_list]
    else:
        F0s = [_draw_unimodular(rng) for _ in range(max(n_random_F0, 1))]

    base = _base_run(nodes, program.F, dt, params, relax_passes,
                     "unimodular", "invariant")
    stress_devs, internal_devs = [], []
    for F0 in F0s:
        tr = _transformed_run(nodes, program.F, dt, params, F0, relax_passes,
                              "unimodular", "invariant")
        d_T, d_C = _deviations(base, tr, F0)
        stress_devs.append(d_T)
        internal_devs.append(d_C)

    control_n_steps = min(control_n_steps, n_steps)
    c_nodes = sample(program, control_n_steps)
    c_dt = program.duration / control_n_steps
    controls = {}
    for name, kwargs in [("additive", dict(ci_correction="additive_identity",
                                           shift="invariant")),
                         ("shift", dict(ci_correction="unimodular",
                                        shift="noninvariant"))]:
        variant_base = _base_run(c_nodes, program.F, c_dt, params,
                                 relax_passes, **kwargs)
        dev = 0.0
        for F0 in F0s[:max(n_control_F0, 1)]:
            tr = _transformed_run(c_nodes, program.F, c_dt, params, F0,
                                  relax_passes, **kwargs)
            dev = max(dev, _deviations(variant_base, tr, F0)[0])
        controls[name] = dev

    return AuditReport(seed=seed, n_steps=n_steps,
                       control_n_steps=control_n_steps,
                       stress_deviations=stress_devs,
                       internal_deviations=internal_devs,
                       f0_determinants=[float(np.linalg.det(F0))
                                        for F0 in F0s],
                       control_additive=controls["additive"],
                       control_shift=controls["shift"])


# ---------------------------------------------------------------------------
# round-off study of the corrector root expression
# ---------------------------------------------------------------------------

@dataclass
class RoundoffReport:
    seed: int
    xi_primes: list[float]
    naive_deviation: np.ndarray          # (n_xi, n_samples) vs analytic limit
    stable_deviation: np.ndarray
    form_agreement: np.ndarray           # naive vs stable, relative

    def amplification(self, k: int) -> np.ndarray:
        """Per-sample ratio naive/stable deviation at xi_prime index k."""
        floor = np.finfo(float).tiny
        return self.naive_deviation[k] / np.maximum(self.stable_deviation[k],
                                                    floor)


def _random_spd(rng: np.random.Generator, lo: float = 0.5,
                hi: float = 2.0) -> np.ndarray:
    """Random SPD tensor with unit determinant and moderate conditioning."""
    w = rng.uniform(lo, hi, size=3)
    M = rng.normal(size=(3, 3))
    Q, _ = np.linalg.qr(M)
    A = sym((Q * w) @ Q.T)
    return unimodular(A)


def roundoff_study(xi_primes: Sequence[float] = (1e-2, 1e-6, 1e-10),
                   n_samples: int = 50, seed: int = 0) -> RoundoffReport:
    """Compare the two evaluation orders of the corrector root expression.

    For each random SPD tensor the determinant multiplier comes from the
    perturbation estimate; both forms are measured against the analytic
    xi' -> 0 limit A/z.  The naive form divides the matrix square root by
    2 xi' and its round-off error grows accordingly; the stable form stays
    at working precision.
    """
    rng = np.random.default_rng(seed)
    samples = [_random_spd(rng) for _ in range(n_samples)]
    n_xi = len(xi_primes)
    naive_dev = np.zeros((n_xi, n_samples))
    stable_dev = np.zeros((n_xi, n_samples))
    agree = np.zeros((n_xi, n_samples))
    for k, xp in enumerate(xi_primes):
        for i, A in enumerate(samples):
            det_A = float(np.linalg.det(A))
            z0 = det_A ** (1.0 / 3.0)
            z = z0 - float(np.trace(A)) / (3.0 * z0) * xp
            limit = A / z
            scale = frob_norm(limit)
            y_stable = stable_y_form(A, z, xp)
            stable_dev[k, i] = frob_norm(y_stable - limit) / scale
            if xp > 0.0:
                y_naive = naive_y_form(A, z, xp)
                naive_dev[k, i] = frob_norm(y_naive - limit) / scale
                agree[k, i] = frob_norm(y_naive - y_stable) / scale
            else:
                naive_dev[k, i] = math.nan
                agree[k, i] = math.nan
    return RoundoffReport(seed=seed, xi_primes=list(xi_primes),
                          naive_deviation=naive_dev,
                          stable_deviation=stable_dev,
                          form_agreement=agree)
