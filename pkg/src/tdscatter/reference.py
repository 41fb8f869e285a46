"""
Analytic Laplace-domain scattering by a homogeneous sphere.

Fields are expanded in vector multipoles built from the modified spherical
Bessel functions ``i_n`` (regular at the origin) and ``k_n`` (decaying at
infinity). With ``psi = z_n(kappa r) P_n^1(cos theta) {cos, sin}(phi)``::

    M = curl(x psi),   N = curl M / kappa,   curl N = -kappa M.

Each multipole order and parity decouples, and the coefficients follow from
a 2x2 solve enforcing continuity of the tangential field and of
``mu^-1 n x curl E`` at ``r = a`` (or a vanishing tangential field for a
perfect conductor).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .potentials import MaterialParams


# ---------------------------------------------------------------------------
# Modified spherical Bessel functions
# ---------------------------------------------------------------------------


def bessel_ik(n: int, z, scaled: bool = False):
    """Modified spherical Bessel functions of orders ``0..n`` and their
    derivatives.

    ``i_n(z) = sqrt(pi / 2z) I_{n+1/2}(z)``, ``k_n(z) = sqrt(pi / 2z) K_{n+1/2}(z)``
    so that ``k_0(z) = (pi/2) exp(-z)/z``.

    Parameters
    ----------
    n : int
        Highest order.
    z : complex or array
        Argument with positive real part.
    scaled : bool
        Return ``exp(-z) i_n`` and ``exp(z) k_n`` (and derivatives scaled the
        same way) to avoid overflow for large ``Re z``.

    Returns
    -------
    i, di, k, dk : arrays of shape ``(n + 1,) + z.shape``
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.real <= 0):
        raise ValueError("modified spherical Bessel functions need Re z > 0")
    n = int(n)
    if n < 0:
        raise ValueError("order must be nonnegative")
    ez2 = np.exp(-2 * z)
    # k_n by upward recurrence (dominant direction), scaled by exp(z)
    k = np.empty((n + 2,) + z.shape, dtype=complex)
    k[0] = 0.5 * np.pi / z
    k[1] = 0.5 * np.pi * (1.0 / z + 1.0 / z ** 2)
    for m in range(1, n + 1):
        k[m + 1] = k[m - 1] + (2 * m + 1) / z * k[m]
    # i_n by downward recurrence from a high start, normalized with i_0,
    # scaled by exp(-z)
    start = n + 30 + int(np.ceil(np.max(np.abs(z))))
    vals = np.zeros((n + 2,) + z.shape, dtype=complex)
    i_next = np.zeros(z.shape, dtype=complex)           # i_{m+1}
    i_cur = np.full(z.shape, 1e-30, dtype=complex)      # i_m
    for m in range(start, 0, -1):
        i_next, i_cur = i_cur, i_next + (2 * m + 1) / z * i_cur
        if m - 1 <= n + 1:
            vals[m - 1] = i_cur
        big = np.abs(i_cur) > 1e200
        if np.any(big):
            fac = np.where(big, 1e-200, 1.0)
            i_cur, i_next, vals = i_cur * fac, i_next * fac, vals * fac
    i0_true = 0.5 * (1.0 - ez2) / z                   # exp(-z) sinh(z) / z
    scale = i0_true / vals[0]
    i = vals * scale
    ords = np.arange(n + 1).reshape((-1,) + (1,) * z.ndim)
    di = np.empty((n + 1,) + z.shape, dtype=complex)
    dk = np.empty((n + 1,) + z.shape, dtype=complex)
    di[0] = i[1]
    dk[0] = -k[1]
    if n >= 1:
        di[1:] = i[:n] - (ords[1:] + 1) / z * i[1:n + 1]
        dk[1:] = -k[:n] - (ords[1:] + 1) / z * k[1:n + 1]
    i, k = i[:n + 1], k[:n + 1]
    if not scaled:
        ep, em = np.exp(z), np.exp(-z)
        i, di = i * ep, di * ep
        k, dk = k * em, dk * em
    return i, di, k, dk


def _riccati(zn, dzn, x):
    """``w = z + x z'`` (the derivative of ``x z(x)``)."""
    return zn + x * dzn


# ---------------------------------------------------------------------------
# Vector multipoles
# ---------------------------------------------------------------------------


def _angular(nmax, theta):
    """``pi_n = P_n^1 / sin`` and ``tau_n = d P_n^1 / d theta`` for
    ``n = 0..nmax`` (no Condon-Shortley phase)."""
    mu = np.cos(theta)
    pi = np.zeros((nmax + 1,) + np.shape(theta))
    tau = np.zeros_like(pi)
    if nmax >= 1:
        pi[1] = 1.0
        tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi, tau


def _spherical(pts):
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    phi = np.arctan2(y, x)
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    rhat = np.stack([st * cp, st * sp, ct], 1)
    that = np.stack([ct * cp, ct * sp, -st], 1)
    phat = np.stack([-sp, cp, np.zeros_like(sp)], 1)
    return r, theta, phi, rhat, that, phat


def multipole_fields(n, kind, parity, radial, kappa, pts):
    """Evaluate a vector multipole and its curl.

    Parameters
    ----------
    n : int
        Order (>= 1); azimuthal index is 1.
    kind : {"M", "N"}
    parity : {"e", "o"}
        ``cos(phi)`` or ``sin(phi)`` dependence of the generating potential.
    radial : {"i", "k"}
        Regular or decaying radial function.
    kappa : complex
        Wavenumber parameter.
    pts : (P, 3) array

    Returns
    -------
    F, curlF : (P, 3) complex arrays
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r, theta, phi, rhat, that, phat = _spherical(pts)
    rho = kappa * r
    ib, dib, kb, dkb = bessel_ik(n, rho)
    zn, dzn = (ib[n], dib[n]) if radial == "i" else (kb[n], dkb[n])
    w = _riccati(zn, dzn, rho)
    pi, tau = _angular(n, theta)
    pin, taun = pi[n], tau[n]
    c, s_ = (np.cos(phi), np.sin(phi))
    if parity == "e":
        a_th_M, a_ph_M = -pin * s_, -taun * c
        a_r_N, a_th_N, a_ph_N = np.sin(theta) * pin * c, taun * c, -pin * s_
    else:
        a_th_M, a_ph_M = pin * c, -taun * s_
        a_r_N, a_th_N, a_ph_N = np.sin(theta) * pin * s_, taun * s_, pin * c
    M = zn[:, None] * (a_th_M[:, None] * that + a_ph_M[:, None] * phat)
    N = ((n * (n + 1)) * (zn / rho) * a_r_N)[:, None] * rhat \
        + (w / rho)[:, None] * (a_th_N[:, None] * that + a_ph_N[:, None] * phat)
    if kind == "M":
        return M, kappa * N
    if kind == "N":
        return N, -kappa * M
    raise ValueError("kind must be 'M' or 'N'")


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Multipole:
    """Regular incident multipole ``amplitude * {M, N}_{parity, 1, n}``."""

    n: int
    kind: str = "N"
    parity: str = "e"
    amplitude: complex = 1.0


@dataclass
class SphereScenario:
    """Sphere of radius ``a`` centred at the origin.

    ``pec=True`` makes the sphere perfectly conducting (the obstacle
    materials are then unused). ``incident`` is a list of regular multipoles;
    alternatively ``plane_wave=(d, p)`` requests ``exp(-kappa0 d.x) p``
    truncated at order ``L``.
    """

    radius: float = 1.0
    mat: MaterialParams = field(default_factory=MaterialParams)
    s: complex = 1.0
    incident: Sequence[Multipole] = (Multipole(1, "N", "e"),)
    plane_wave: Optional[tuple] = None
    L: int = 20
    pec: bool = False
    tail_tol: float = 1e-10

    @property
    def kappa0(self):
        return complex(self.s) / self.mat.c0

    @property
    def kappa1(self):
        return complex(self.s) / self.mat.c

    def modes(self) -> List[Multipole]:
        if self.plane_wave is None:
            return list(self.incident)
        out = []
        for n in range(1, self.L + 1):
            cn = (-1) ** n * (2 * n + 1) / (n * (n + 1))
            out.append(Multipole(n, "M", "o", cn))
            out.append(Multipole(n, "N", "e", -cn))
        return out

    def _frame(self):
        """Rotation taking the local (x, z) axes to (p, d)."""
        if self.plane_wave is None:
            return np.eye(3)
        d, p = (np.asarray(v, dtype=float) for v in self.plane_wave)
        d = d / np.linalg.norm(d)
        p = p / np.linalg.norm(p)
        if abs(np.dot(d, p)) > 1e-12:
            raise ValueError("polarization must be orthogonal to the direction")
        return np.column_stack([p, np.cross(d, p), d])


def mode_coefficients(sc: SphereScenario, mode: Multipole):
    """Scattered (``k``-type) and transmitted (``i``-type) coefficients of a
    unit incident multipole."""
    a = sc.radius
    k0, k1 = sc.kappa0, sc.kappa1
    n = mode.n
    x0, x1 = k0 * a, k1 * a
    i0, di0, kk0, dk0 = (v[n] for v in bessel_ik(n, x0))
    wi0, wk0 = _riccati(i0, di0, x0), _riccati(kk0, dk0, x0)
    if sc.pec:
        if mode.kind == "M":
            return -i0 / kk0, 0.0
        return -wi0 / wk0, 0.0
    mu0, mu = sc.mat.mu0, sc.mat.boundary_mu()
    i1, di1, _, _ = (v[n] for v in bessel_ik(n, x1))
    wi1 = _riccati(i1, di1, x1)
    if mode.kind == "M":
        A = np.array([[kk0, -i1], [wk0 / mu0, -wi1 / mu]])
        b = -np.array([i0, wi0 / mu0])
    else:
        A = np.array([[wk0 / k0, -wi1 / k1], [k0 * kk0 / mu0, -k1 * i1 / mu]])
        b = -np.array([wi0 / k0, k0 * i0 / mu0])
    beta, gamma = np.linalg.solve(A, b)
    return beta, gamma


def _accumulate(sc: SphereScenario, pts, which):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    R = sc._frame()
    loc = pts @ R
    E = np.zeros((len(pts), 3), dtype=complex)
    C = np.zeros((len(pts), 3), dtype=complex)
    last = 0.0
    for mode in sc.modes():
        if which == "incident":
            coef, radial, kappa = 1.0, "i", sc.kappa0
        else:
            beta, gamma = mode_coefficients(sc, mode)
            if which == "scattered":
                coef, radial, kappa = beta, "k", sc.kappa0
            else:
                coef, radial, kappa = gamma, "i", sc.kappa1
        F, cF = multipole_fields(mode.n, mode.kind, mode.parity, radial, kappa, loc)
        amp = mode.amplitude * coef
        E += amp * F
        C += amp * cF
        if mode.n == sc.L:
            last = max(last, np.abs(amp * F).max())
    if sc.plane_wave is not None and which != "incident":
        scale = max(np.abs(E).max(), 1e-300)
        if last > sc.tail_tol * scale:
            raise ArithmeticError("multipole series not converged: last term %.2e "
                                  "relative to field %.2e" % (last, scale))
    return E @ R.T, C @ R.T


def incident_field(sc: SphereScenario, pts):
    """Incident field and its curl."""
    return _accumulate(sc, pts, "incident")


def sphere_scattered_field(sc: SphereScenario, pts):
    """Scattered field and its curl at points outside the sphere."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if np.any(np.linalg.norm(pts, axis=1) <= sc.radius):
        raise ValueError("scattered field requested inside the sphere")
    return _accumulate(sc, pts, "scattered")


def sphere_interior_field(sc: SphereScenario, pts):
    """Transmitted field and its curl at points inside the sphere."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if sc.pec:
        raise ValueError("no interior field for a perfect conductor")
    if np.any(np.linalg.norm(pts, axis=1) >= sc.radius):
        raise ValueError("interior field requested outside the sphere")
    return _accumulate(sc, pts, "interior")
