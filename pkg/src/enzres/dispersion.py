"""Lossy resonance frequency under a one-pole Lorentz shell permittivity.

The shell material follows eps_enz(omega, gamma) =
eps_inf * (1 + omega_p**2 / (omega_0**2 - omega**2 - i*omega*gamma)), which
vanishes at the ENZ frequency omega* = sqrt(omega_p**2 + omega_0**2) when
gamma = 0.  With the geometry calibrated so the leading eigenvalue equals
lambda* = omega*^2 * eps_D (units with c = 1), the lossy resonance omega(gamma)
solves lambda(delta(omega, gamma)) = omega**2 * eps_D with
delta = eps_enz / eps_D; it is traced by warm-started Newton continuation on
the truncated series.  The decay rate at small loss is
omega'(0) = -i * a2 / (a1 + a3 * eps_D / |lambda1|), purely imaginary with
negative imaginary part.  Time convention e^{-i omega t}: Im omega < 0 means
temporal decay.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from enzres.errors import InputError, NumericalError

__all__ = ["LorentzParams", "CoreDielectric", "ResonanceTrace", "eps_enz",
           "enz_frequency", "lambda_star", "calibrate_scale", "sensitivities",
           "omega_prime0", "trace_resonance", "trace_to_csv"]

TRACE_CSV_HEADER = "gamma,re_omega,im_omega,re_delta,im_delta,newton_iters"


@dataclass(frozen=True)
class LorentzParams:
    """One-pole Lorentz oscillator parameters, nondimensionalized by a
    reference frequency (gamma is passed per call, not stored)."""

    eps_inf: float
    omega_p: float
    omega_0: float

    def __post_init__(self):
        if not (self.eps_inf > 0 and self.omega_p > 0 and self.omega_0 >= 0):
            raise InputError("LorentzParams: need eps_inf > 0, omega_p > 0, "
                             "omega_0 >= 0")


@dataclass(frozen=True)
class CoreDielectric:
    """Constant core permittivity eps_D > 0 (c = 1 after
    nondimensionalization); omega**2 * eps_D is automatically increasing."""

    eps_d: float = 1.0

    def __post_init__(self):
        if not self.eps_d > 0:
            raise InputError("CoreDielectric: eps_d must be > 0")


@dataclass
class ResonanceTrace:
    """Newton-continued resonance curve gamma -> omega(gamma)."""

    gammas: np.ndarray
    omegas: np.ndarray        # complex
    deltas: np.ndarray        # complex
    lambdas: np.ndarray       # complex, series value at delta
    newton_iters: np.ndarray
    omega_prime0: complex
    omega_star: float


def eps_enz(p: LorentzParams, omega, gamma: float = 0.0):
    """Lorentz permittivity eps_inf*(1 + omega_p^2/(omega_0^2 - omega^2
    - i*omega*gamma))."""
    if gamma < 0:
        raise InputError("eps_enz: gamma must be >= 0")
    denom = p.omega_0 ** 2 - omega * omega - 1j * omega * gamma
    if denom == 0:
        raise InputError(f"eps_enz: pole at omega = {omega}, gamma = {gamma}")
    val = p.eps_inf * (1.0 + p.omega_p ** 2 / denom)
    if gamma == 0 and np.imag(np.asarray(omega)) == 0:
        return float(np.real(val))
    return complex(val)


def _d_eps_enz_domega(p: LorentzParams, omega, gamma: float):
    """Analytic d(eps_enz)/d(omega)."""
    denom = p.omega_0 ** 2 - omega * omega - 1j * omega * gamma
    return p.eps_inf * p.omega_p ** 2 * (2.0 * omega + 1j * gamma) / denom ** 2


def enz_frequency(p: LorentzParams) -> float:
    """omega* = sqrt(omega_p**2 + omega_0**2), the lossless zero of
    eps_enz."""
    return math.hypot(p.omega_p, p.omega_0)


def lambda_star(p: LorentzParams, d: CoreDielectric) -> float:
    """Target eigenvalue lambda* = omega*^2 * eps_D (c = 1)."""
    return enz_frequency(p) ** 2 * d.eps_d


def calibrate_scale(lambda0_geom: float, lam_star: float) -> float:
    """Geometric scale factor t = sqrt(lambda0/lambda*): scaling the mesh
    coordinates by t moves the geometry's permissible eigenvalue to
    lambda*."""
    if not (lambda0_geom > 0 and lam_star > 0):
        raise InputError("calibrate_scale: both eigenvalues must be > 0")
    return math.sqrt(lambda0_geom / lam_star)


def sensitivities(p: LorentzParams, d: CoreDielectric,
                  fd_step: float = 1e-6, check_tol: float = 1e-6):
    """Closed-form sensitivities at (omega*, gamma=0), cross-checked against
    central finite differences of eps_enz.

    a1 = d(eps_enz)/d(omega), a2 = (1/i) d(eps_enz)/d(gamma),
    a3 = d(omega**2 eps_D)/d(omega); all positive, and a2 = a1/2.
    """
    ws = enz_frequency(p)
    a1 = 2.0 * p.eps_inf * ws / p.omega_p ** 2
    a2 = p.eps_inf * ws / p.omega_p ** 2
    a3 = 2.0 * ws * d.eps_d

    def eps_raw(omega, gamma):
        # formula without the gamma >= 0 guard, for central differencing
        denom = p.omega_0 ** 2 - omega * omega - 1j * omega * gamma
        return p.eps_inf * (1.0 + p.omega_p ** 2 / denom)

    h = fd_step
    a1_fd = (eps_raw(ws + h, 0.0) - eps_raw(ws - h, 0.0)) / (2 * h)
    a2_fd = (eps_raw(ws, h) - eps_raw(ws, -h)) / (2j * h)
    a3_fd = ((ws + h) ** 2 - (ws - h) ** 2) * d.eps_d / (2 * h)
    for name, exact, fd in (("a1", a1, a1_fd), ("a2", a2, a2_fd),
                            ("a3", a3, a3_fd)):
        if abs(exact - fd) > check_tol * abs(exact):
            raise NumericalError(
                f"sensitivities: {name} closed form {exact!r} disagrees with "
                f"finite difference {fd!r}")
    return a1, a2, a3


def omega_prime0(a1: float, a2: float, a3: float, eps_d: float,
                 lambda1: float) -> complex:
    """Leading decay rate omega'(0) = -i*a2/(a1 + a3*eps_d/|lambda1|);
    purely imaginary, Im < 0; requires lambda1 < 0."""
    if not lambda1 < 0:
        raise InputError(f"omega_prime0: lambda1 must be < 0, got {lambda1}")
    return complex(0.0, -a2 / (a1 + a3 * eps_d / abs(lambda1)))


def trace_resonance(series, p: LorentzParams, d: CoreDielectric,
                    gamma_max: float, steps: int,
                    newton_tol: float = 1e-12,
                    max_newton: int = 50) -> ResonanceTrace:
    """Trace omega(gamma) on a uniform gamma grid by warm-started Newton.

    `series` needs attributes lambda0 and lambda_coeffs of order >= 2.  The
    coefficients are rescaled exactly by lambda*/lambda0 (a uniform geometric
    rescaling) so gamma = 0 returns omega* exactly; the caller must first
    have calibrated the geometry to within 0.1% (see `calibrate_scale`).
    """
    if len(series.lambda_coeffs) < 2:
        raise InputError("trace_resonance: series order must be >= 2")
    if gamma_max < 0 or steps < 1:
        raise InputError("trace_resonance: need gamma_max >= 0 and steps >= 1")
    ws = enz_frequency(p)
    lam_star = lambda_star(p, d)
    scale = lam_star / series.lambda0
    if abs(scale - 1.0) > 1e-3:
        raise InputError(
            f"trace_resonance: series lambda0 = {series.lambda0:.6g} is not "
            f"calibrated to lambda* = {lam_star:.6g} (use calibrate_scale "
            "and rebuild, or fix units)")
    coeffs = np.array([series.lambda0, *series.lambda_coeffs]) * scale

    dcoeffs = coeffs[1:] * np.arange(1, len(coeffs))
    eps_d = d.eps_d

    def lam_of(delta):
        return np.polyval(coeffs[::-1], delta)

    def dlam_of(delta):
        return np.polyval(dcoeffs[::-1], delta)

    a1, a2, a3 = sensitivities(p, d)
    wprime0 = omega_prime0(a1, a2, a3, eps_d, float(coeffs[1]))

    gammas = np.linspace(0.0, gamma_max, steps + 1)
    omegas = np.empty(len(gammas), dtype=complex)
    deltas = np.empty(len(gammas), dtype=complex)
    lams = np.empty(len(gammas), dtype=complex)
    iters = np.zeros(len(gammas), dtype=int)

    omega = complex(ws)
    for j, gamma in enumerate(gammas):
        if gamma == 0.0:
            omega = complex(ws)  # delta = 0, lambda = lambda* exactly
        else:
            # warm start from the previous gamma
            for it in range(1, max_newton + 1):
                delta = eps_enz(p, omega, gamma) / eps_d
                g_val = lam_of(delta) - omega * omega * eps_d
                if abs(g_val) <= newton_tol * max(1.0, abs(coeffs[0])):
                    break
                g_der = (dlam_of(delta) * _d_eps_enz_domega(p, omega, gamma)
                         / eps_d - 2.0 * omega * eps_d)
                step = g_val / g_der
                omega = omega - step
                if not np.isfinite(omega) or abs(omega - ws) > 0.5 * ws:
                    raise NumericalError(
                        f"trace_resonance: Newton diverged at gamma = {gamma} "
                        f"(iterate {omega})")
            else:
                raise NumericalError(
                    f"trace_resonance: Newton did not converge at gamma = "
                    f"{gamma} (last |G| = {abs(g_val):.3e})")
            iters[j] = it
        delta = (eps_enz(p, omega, gamma) / eps_d) if gamma > 0 else 0.0
        omegas[j], deltas[j], lams[j] = omega, delta, lam_of(delta)

    return ResonanceTrace(gammas=gammas, omegas=omegas, deltas=deltas,
                          lambdas=lams, newton_iters=iters,
                          omega_prime0=wprime0, omega_star=ws)


def trace_to_csv(trace: ResonanceTrace) -> str:
    out = io.StringIO()
    out.write(TRACE_CSV_HEADER + "\n")
    for g, w, dl, it in zip(trace.gammas, trace.omegas, trace.deltas,
                            trace.newton_iters):
        out.write(f"{float(g)!r},{float(w.real)!r},{float(w.imag)!r},"
                  f"{float(dl.real)!r},{float(dl.imag)!r},{int(it)}\n")
    return out.getvalue()
