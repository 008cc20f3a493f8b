"""Constitutive model: neo-Hookean elasticity with nonlinear kinematic hardening
channels and Voce-type isotropic hardening, driven by viscous overstress.

Energies are stored premultiplied by the reference density (units MPa); the
density itself never appears alone.  The normalisation stress ``F0`` is fixed
at 1 MPa and is not a material parameter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .tensor import DomainError, I3, dev, eigh_spd, inv, sym, unimodular

__all__ = [
    "F0",
    "SQ23",
    "BackstressChannel",
    "MaterialParams",
    "MaterialState",
    "virgin_state",
    "free_energy",
    "pk2_stress",
    "backstress",
    "total_backstress",
    "cauchy_stress",
    "driving_force_norm",
    "hardening_R",
    "update_s_sd",
    "f2_driving_force",
    "overstress",
    "load_material_card",
    "bundled_card",
    "bundled_card_names",
]

F0 = 1.0                      # MPa, fixed normalisation of the overstress
SQ23 = math.sqrt(2.0 / 3.0)


@dataclass(frozen=True)
class BackstressChannel:
    """One kinematic-hardening channel: stiffness c (MPa), saturation kappa (1/MPa)."""
    c: float
    kappa: float

    def __post_init__(self):
        if self.c < 0.0:
            raise DomainError("channel stiffness c must be >= 0")
        if self.kappa < 0.0:
            raise DomainError("channel saturation kappa must be >= 0")


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive constants.  Stresses in MPa, eta in seconds."""
    k: float                  # bulk-like modulus
    mu: float                 # shear modulus
    channels: tuple[BackstressChannel, ...]
    gamma: float              # isotropic hardening modulus
    beta: float               # isotropic saturation (dimensionless)
    K: float                  # initial yield stress
    m: float                  # viscosity exponent
    eta: float                # viscosity (s)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(
            ch if isinstance(ch, BackstressChannel) else BackstressChannel(**ch)
            for ch in self.channels))
        if self.k <= 0.0 or self.mu <= 0.0 or self.K <= 0.0:
            raise DomainError("k, mu and K must be positive")
        if self.beta < 0.0 or self.eta < 0.0 or self.m < 1.0:
            raise DomainError("require beta >= 0, eta >= 0, m >= 1")

    @property
    def c_total(self) -> float:
        return sum(ch.c for ch in self.channels)

    def with_overrides(self, **kwargs) -> "MaterialParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class MaterialState:
    """Internal variables at a time node.

    Ci and every Cki are SPD with unit determinant; s is the accumulated
    inelastic arc length and s_d its dissipative part.
    """
    Ci: np.ndarray
    Cki: tuple[np.ndarray, ...]
    s: float = 0.0
    s_d: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "Cki", tuple(self.Cki))

    def validate(self, det_tol: float = 1e-10):
        for name, A in [("Ci", self.Ci)] + [(f"C{k+1}i", B)
                                            for k, B in enumerate(self.Cki)]:
            eigh_spd(A, name)
            d = float(np.linalg.det(A))
            if abs(d - 1.0) > det_tol:
                raise DomainError(f"det {name} = {d} deviates from 1")
        if self.s < 0.0 or self.s_d < 0.0:
            raise DomainError("arc lengths must be non-negative")


def virgin_state(params: MaterialParams) -> MaterialState:
    """Unloaded isotropic initial state: all tensors identity, zero arc length."""
    return MaterialState(Ci=I3.copy(),
                         Cki=tuple(I3.copy() for _ in params.channels))


# ---------------------------------------------------------------------------
# energies and stresses
# ---------------------------------------------------------------------------

def _psi_el(C: np.ndarray, Ci: np.ndarray, params: MaterialParams) -> float:
    """Elastic stored energy (times density).  Accepts general invertible C."""
    Ce = C @ inv(Ci)
    d = float(np.linalg.det(Ce))
    if d <= 0.0:
        raise DomainError("det(C Ci^-1) must be positive")
    vol = params.k / 50.0 * (d ** 2.5 + d ** -2.5 - 2.0)
    iso = params.mu / 2.0 * (float(np.trace(unimodular(Ce))) - 3.0)
    return vol + iso


def _psi_kin(Ci: np.ndarray, Cki: np.ndarray, c_k: float) -> float:
    """Kinematic stored energy of one channel (times density)."""
    Ck = Ci @ inv(Cki)
    return c_k / 4.0 * (float(np.trace(unimodular(Ck))) - 3.0)


def _psi_iso(s: float, s_d: float, params: MaterialParams) -> float:
    return 0.5 * params.gamma * (s - s_d) ** 2


def free_energy(C: np.ndarray, state: MaterialState,
                params: MaterialParams) -> float:
    """Total stored energy (times density, MPa); zero at the virgin state."""
    eigh_spd(C, "C")
    psi = _psi_el(C, state.Ci, params)
    for ch, Cki in zip(params.channels, state.Cki):
        psi += _psi_kin(state.Ci, Cki, ch.c)
    psi += _psi_iso(state.s, state.s_d, params)
    return psi


def pk2_stress(C: np.ndarray, Ci: np.ndarray,
               params: MaterialParams) -> np.ndarray:
    """Second Piola-Kirchhoff stress, volumetric part included.

    Assumes det Ci = 1 (enforced on states); result is exactly symmetric.
    """
    eigh_spd(C, "C")
    eigh_spd(Ci, "Ci")
    dC = float(np.linalg.det(C))
    C_inv = inv(C)
    vol = params.k / 10.0 * (dC ** 2.5 - dC ** -2.5)
    T = vol * C_inv + params.mu * (C_inv @ dev(unimodular(C) @ inv(Ci)))
    return sym(T)


def backstress(Ci: np.ndarray, Cki: np.ndarray, c_k: float) -> np.ndarray:
    """Partial backstress of one channel, (c_k/2) Ci^-1 (Ci Cki^-1)^D."""
    eigh_spd(Ci, "Ci")
    eigh_spd(Cki, "Cki")
    return sym(0.5 * c_k * (inv(Ci) @ dev(Ci @ inv(Cki))))


def total_backstress(Ci: np.ndarray, Cki: tuple[np.ndarray, ...],
                     params: MaterialParams) -> np.ndarray:
    X = np.zeros((3, 3))
    for ch, Ck in zip(params.channels, Cki):
        X = X + backstress(Ci, Ck, ch.c)
    return X


def cauchy_stress(F: np.ndarray, T_pk2: np.ndarray) -> np.ndarray:
    """Push-forward T = (det F)^-1 F T_pk2 F^T."""
    J = float(np.linalg.det(F))
    if J <= 0.0:
        raise DomainError("det F must be positive")
    return (F @ T_pk2 @ F.T) / J


def _driving_force_norm(C: np.ndarray, Ci: np.ndarray,
                        Cki: tuple[np.ndarray, ...],
                        params: MaterialParams) -> float:
    """Norm of the driving force sqrt(tr Xi^2) with Xi the trace-free tensor
    (C T - Ci X)^D.

    Xi is a product of a symmetric tensor with an SPD one, hence similar to a
    symmetric tensor: tr(Xi^2) is the sum of its squared (real) eigenvalues
    and is non-negative.  The volumetric stress contributes a multiple of the
    identity to C T and drops out of the deviator, so the deviatoric-only
    stress is used here.
    """
    invs = np.linalg.inv(np.stack((Ci,) + tuple(Cki)))
    Xi = params.mu * (unimodular(C) @ invs[0])
    for ch, Ck_inv in zip(params.channels, invs[1:]):
        Xi = Xi - 0.5 * ch.c * (Ci @ Ck_inv)
    t = (Xi[0, 0] + Xi[1, 1] + Xi[2, 2]) / 3.0
    Xi[0, 0] -= t
    Xi[1, 1] -= t
    Xi[2, 2] -= t
    return math.sqrt(max(float(np.einsum("ij,ji->", Xi, Xi)), 0.0))


def driving_force_norm(C: np.ndarray, state: MaterialState,
                       params: MaterialParams) -> float:
    return _driving_force_norm(C, state.Ci, state.Cki, params)


# ---------------------------------------------------------------------------
# scalar hardening updates, parameterised by the inelastic increment xi
# ---------------------------------------------------------------------------

def hardening_R(xi: float, s: float, s_d: float,
                params: MaterialParams) -> float:
    """Isotropic hardening stress after an inelastic increment xi >= 0."""
    if params.gamma == 0.0:
        return 0.0
    R_old = params.gamma * (s - s_d)
    return (R_old + SQ23 * params.gamma * xi) / (1.0 + SQ23 * params.beta * xi)


def update_s_sd(xi: float, s: float, s_d: float,
                params: MaterialParams) -> tuple[float, float]:
    """Advance the arc length and its dissipative part by xi.

    For gamma = 0 the hardening is switched off entirely and s_d is frozen
    (the beta/gamma factor is a removable singularity).
    """
    s_new = s + SQ23 * xi
    if params.gamma == 0.0:
        return s_new, s_d
    R_new = hardening_R(xi, s, s_d, params)
    s_d_new = s_d + (params.beta / params.gamma) * SQ23 * xi * R_new
    return s_new, s_d_new


def f2_driving_force(xi: float, dt: float, s: float, s_d: float,
                     params: MaterialParams) -> float:
    """Driving-force norm expressed through xi (viscous branch plus yield radius)."""
    visc = 0.0
    if params.eta > 0.0 and xi > 0.0:
        visc = F0 * (params.eta * xi / dt) ** (1.0 / params.m)
    return visc + SQ23 * (params.K + hardening_R(xi, s, s_d, params))


def _overstress(C: np.ndarray, Ci: np.ndarray, Cki: tuple[np.ndarray, ...],
                xi: float, s: float, s_d: float,
                params: MaterialParams) -> float:
    F1 = _driving_force_norm(C, Ci, Cki, params)
    return F1 - SQ23 * (params.K + hardening_R(xi, s, s_d, params))


def overstress(C: np.ndarray, state: MaterialState, xi: float,
               params: MaterialParams) -> float:
    """Overstress: driving-force norm minus the current yield radius."""
    return _overstress(C, state.Ci, state.Cki, xi, state.s, state.s_d, params)


# ---------------------------------------------------------------------------
# material cards
# ---------------------------------------------------------------------------

_CARD_KEYS = {"k", "mu", "channels", "gamma", "beta", "K", "m", "eta"}


def _params_from_dict(doc: dict, name: str) -> MaterialParams:
    missing = _CARD_KEYS - set(doc)
    if missing:
        raise DomainError(f"material card misses keys: {sorted(missing)}")
    channels = tuple(BackstressChannel(c=float(ch["c"]), kappa=float(ch["kappa"]))
                     for ch in doc["channels"])
    return MaterialParams(k=float(doc["k"]), mu=float(doc["mu"]),
                          channels=channels, gamma=float(doc["gamma"]),
                          beta=float(doc["beta"]), K=float(doc["K"]),
                          m=float(doc["m"]), eta=float(doc["eta"]), name=name)


def load_material_card(path) -> MaterialParams:
    """Read a JSON material card from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return _params_from_dict(doc, Path(path).stem)


def bundled_card_names() -> list[str]:
    return ["aa5754o", "42crmo4"]


def bundled_card(name: str) -> MaterialParams:
    """Load one of the bundled cards: 'aa5754o' or '42crmo4'."""
    if name not in bundled_card_names():
        raise DomainError(f"unknown bundled card {name!r}; "
                          f"available: {bundled_card_names()}")
    text = resources.files("pebm").joinpath(f"data/{name}.json").read_text()
    return _params_from_dict(json.loads(text), name)
