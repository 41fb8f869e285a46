"""
Convolution quadrature in time and causal excitation signals.

A causal operator with Laplace-domain symbol ``K(s)`` acting on samples
``d_0 .. d_N`` on the grid ``t_n = n dt`` is discretized by the generating
function identity ``sum u_n z^n = K(delta(z) / dt) sum d_n z^n`` of a
multistep method. The power series is evaluated by the trapezoidal rule on
the circle ``|z| = lam``::

    u_n = lam^{-n} / L  sum_l  zeta_l^{-n} K(s_l) D(lam zeta_l),
    s_l = delta(lam zeta_l) / dt,   zeta_l = exp(2 pi i l / L),

with ``D(z) = sum_n d_n z^n``. All frequencies are independent. For real
data and a real-symmetric symbol, ``s_{L-l} = conj(s_l)`` and only
``l = 0 .. L // 2`` are solved.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .coupled import ScatteringData, Solution
from .potentials import eval_scattered

METHODS = ("BDF1", "BDF2", "trapezoidal")
EPS = np.finfo(float).eps


def delta_symbol(method: str, zeta):
    """Generating function ``delta(zeta)`` of the multistep method."""
    z = np.asarray(zeta, dtype=complex)
    if method == "BDF1":
        out = 1 - z
    elif method == "BDF2":
        out = (1 - z) + 0.5 * (1 - z) ** 2
    elif method == "trapezoidal":
        out = 2 * (1 - z) / (1 + z)
    else:
        raise ValueError("unknown multistep method %r" % (method,))
    return out if out.ndim else complex(out)


@dataclass
class CqScheme:
    """CQ discretization parameters.

    Parameters
    ----------
    method : {"BDF1", "BDF2", "trapezoidal"}
    dt : float
        Time step.
    N : int
        Number of steps; samples live at ``t_0 .. t_N``.
    n_nodes : int, optional
        Quadrature nodes ``L`` on the contour (default ``N + 2``). Larger
        values (oversampling) reduce the contour error.
    lam : float, optional
        Contour radius. The default ``eps^(1 / (L + N))`` balances the
        aliasing error ``lam^L`` against the roundoff amplification
        ``eps lam^-N``; for ``L = N + 2`` it equals ``eps^(1 / (2N + 2))``.
    """

    method: str = "BDF2"
    dt: float = 0.1
    N: int = 32
    n_nodes: Optional[int] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError("unknown multistep method %r" % (self.method,))
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if int(self.N) < 1:
            raise ValueError("need at least one time step")
        self.N = int(self.N)
        if self.n_nodes is None:
            self.n_nodes = self.N + 2
        if self.n_nodes < self.N + 1:
            raise ValueError("need at least N + 1 contour nodes")
        if self.lam is None:
            self.lam = EPS ** (1.0 / (self.n_nodes + self.N))
        if not 0 < self.lam < 1:
            raise ValueError("contour radius must lie in (0, 1)")
        s = self.frequencies()
        if np.any(s.real <= 0):
            raise ValueError("a quadrature frequency has nonpositive real part")

    @property
    def T(self):
        return self.N * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.N + 1)

    def nodes(self):
        L = self.n_nodes
        return np.exp(2j * np.pi * np.arange(L) / L)

    def frequencies(self):
        """Laplace parameters ``s_l`` for ``l = 0 .. L - 1``."""
        return delta_symbol(self.method, self.lam * self.nodes()) / self.dt

    def solved_indices(self, real=True):
        """Frequencies that need a solve (``0 .. L // 2`` for real data)."""
        L = self.n_nodes
        return np.arange(L // 2 + 1) if real else np.arange(L)

    def weights(self, l):
        """Forward transform weights ``lam^n zeta_l^n`` for ``n = 0 .. N``."""
        n = np.arange(self.N + 1)
        return self.lam ** n * np.exp(2j * np.pi * l * n / self.n_nodes)

    def forward(self, samples):
        """``D(lam zeta_l)`` for all l from samples of shape (N + 1, ...)."""
        d = np.asarray(samples)
        if d.shape[0] != self.N + 1:
            raise ValueError("expected N + 1 samples")
        L = self.n_nodes
        scaled = d * (self.lam ** np.arange(self.N + 1)).reshape((-1,) + (1,) * (d.ndim - 1))
        pad = np.zeros((L,) + d.shape[1:], dtype=complex)
        pad[:self.N + 1] = scaled
        return L * np.fft.ifft(pad, axis=0)

    def inverse(self, values):
        """Time samples ``u_0 .. u_N`` from ``U(lam zeta_l)``, shape (L, ...)."""
        U = np.asarray(values)
        u = np.fft.fft(U, axis=0)[:self.N + 1] / self.n_nodes
        return u * (self.lam ** -np.arange(self.N + 1)).reshape((-1,) + (1,) * (U.ndim - 1))

    def complete(self, half):
        """Fill ``l = L//2 + 1 .. L - 1`` by conjugation from the solved half."""
        L = self.n_nodes
        half = np.asarray(half)
        full = np.empty((L,) + half.shape[1:], dtype=complex)
        full[:len(half)] = half
        for l in range(len(half), L):
            full[l] = np.conj(half[L - l])
        return full


def cq_apply(scheme: CqScheme, samples, symbol: Callable, real: Optional[bool] = None):
    """Apply the CQ discretization of ``symbol`` to sampled data.

    Parameters
    ----------
    samples : array (N + 1, ...)
        Data at ``t_0 .. t_N``.
    symbol : callable
        ``symbol(s, data_hat) -> array`` for one Laplace parameter.
    real : bool, optional
        Use conjugate symmetry (default: data is real).

    Returns
    -------
    array (N + 1, ...)
    """
    samples = np.asarray(samples)
    if real is None:
        real = not np.iscomplexobj(samples)
    hat = scheme.forward(samples)
    s = scheme.frequencies()
    idx = scheme.solved_indices(real)
    out = np.stack([np.asarray(symbol(s[l], hat[l]), dtype=complex) for l in idx])
    full = scheme.complete(out) if real else out
    u = scheme.inverse(full)
    return u.real if real else u


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


def smoothstep(order: int) -> Polynomial:
    """Polynomial ``S`` of degree ``2 order + 1`` with ``S(0) = 0``,
    ``S(1) = 1`` and derivatives 1..order vanishing at both ends."""
    coef = np.zeros(2 * order + 2)
    for k in range(order + 1):
        coef[order + 1 + k] = comb(order + k, k) * comb(2 * order + 1, order - k) * (-1) ** k
    return Polynomial(coef)


@dataclass
class TimeSignal:
    """Samples on ``t_n = n dt`` with a smoothness descriptor."""

    samples: np.ndarray
    dt: float
    continuity: int
    vanishing: int

    def __post_init__(self):
        if abs(self.samples[0]) > 0:
            raise ValueError("a causal signal must vanish at t = 0")


@dataclass
class SmoothPulse:
    """``amplitude * S(t / t0) * sin(omega t)`` for ``0 <= t < t0`` and
    ``amplitude * sin(omega t)`` afterwards; zero for ``t <= 0``.

    With a smoothstep of order ``k`` the signal and its first ``k + 1``
    derivatives vanish at ``t = 0``, and it is ``C^k`` at ``t = t0``.
    """

    t0: float
    omega: float
    amplitude: float = 1.0
    order: int = 5
    _polys: list = field(init=False, repr=False)

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("ramp time must be positive")
        p = smoothstep(self.order)
        self._polys = [p]
        for _ in range(self.order + 8):
            self._polys.append(self._polys[-1].deriv())

    @property
    def continuity(self):
        return self.order

    @property
    def vanishing(self):
        """Number of derivatives (starting from order 0) vanishing at 0."""
        return self.order + 2

    def window(self, t, k=0):
        t = np.asarray(t, dtype=float)
        x = t / self.t0
        inside = (x > 0) & (x < 1)
        w = np.where(inside, self._polys[k](np.clip(x, 0, 1)) / self.t0 ** k, 0.0)
        if k == 0:
            w = np.where(x >= 1, 1.0, w)
        return w

    def __call__(self, t, derivative: int = 0):
        """Value or exact derivative of order ``derivative`` at ``t``."""
        t = np.asarray(t, dtype=float)
        k = int(derivative)
        om = self.omega
        total = np.zeros_like(t)
        for j in range(k + 1):
            # (d/dt)^(k-j) sin(omega t) = omega^(k-j) sin(omega t + (k-j) pi / 2)
            trig = om ** (k - j) * np.sin(om * t + (k - j) * np.pi / 2)
            total = total + comb(k, j) * self.window(t, j) * trig
        return self.amplitude * np.where(t > 0, total, 0.0)

    def right_limit(self, k: int = 0) -> float:
        """Exact limit of the k-th derivative as ``t -> 0+``."""
        om = self.omega
        val = sum(comb(k, j) * self._polys[j](0.0) / self.t0 ** j
                  * om ** (k - j) * np.sin((k - j) * np.pi / 2) for j in range(k + 1))
        return float(self.amplitude * val)

    def sample(self, dt, N) -> TimeSignal:
        return TimeSignal(self(dt * np.arange(N + 1)), dt, self.continuity, self.vanishing)


def smooth_window(t0: float, omega: float, amplitude: float = 1.0, order: int = 5) -> SmoothPulse:
    """Windowed oscillation with at least five vanishing derivatives at 0."""
    return SmoothPulse(t0, omega, amplitude, order)


def audit_smoothness(profile, required: int = 4, rtol: float = 1e-12):
    """Check that the right limits at ``t = 0`` of ``profile`` and of its
    derivatives up to order ``required`` vanish; raise naming the first
    violated order."""
    for k in range(required + 1):
        scale = max(1.0, abs(profile.omega) ** k, profile.t0 ** -k) * abs(profile.amplitude)
        if abs(profile.right_limit(k)) > rtol * scale:
            raise ValueError("input profile violates the smoothness requirement: "
                             "derivative of order %d does not vanish at t = 0" % k)
    return True


# ---------------------------------------------------------------------------
# Incident plane-wave pulse
# ---------------------------------------------------------------------------


@dataclass
class IncidentPulse:
    """``E_inc(x, t) = p f(t - delay - d.x / c0)`` for a causal profile f.

    ``curl E_inc = -(1/c0) f'(...) d x p``. ``delay`` defaults so that the
    wavefront reaches the sphere of radius ``reach`` at ``t = lead``.
    """

    direction: Sequence[float]
    polarization: Sequence[float]
    profile: SmoothPulse
    c0: float = 1.0
    delay: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        d /= np.linalg.norm(d)
        p /= np.linalg.norm(p)
        if abs(np.dot(d, p)) > 1e-12:
            raise ValueError("polarization must be orthogonal to the direction")
        self.d, self.p = d, p
        self.dxp = np.cross(d, p)

    def retarded(self, pts, t):
        pts = np.atleast_2d(pts)
        return np.asarray(t)[None, :] - self.delay - (pts @ self.d)[:, None] / self.c0

    def fields(self, pts, t):
        """``(E, curl E)`` of shape (P, nt, 3)."""
        tau = self.retarded(pts, t)
        f = self.profile(tau)
        df = self.profile(tau, derivative=1)
        return f[..., None] * self.p, (-df / self.c0)[..., None] * self.dxp

    def arrival_time(self, surface_points, receivers):
        """Earliest time the scattered field can reach each receiver:
        ``min_y (delay + d.y / c0 + |x - y| / c0)`` over surface points."""
        y = np.asarray(surface_points).reshape(-1, 3)
        x = np.atleast_2d(receivers)
        hit = self.delay + y @ self.d / self.c0
        dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2) / self.c0
        return np.min(hit[None, :] + dist, axis=1)

    def laplace_data(self, scheme: CqScheme, l: int) -> ScatteringData:
        """Transformed excitation ``sum_n lam^n zeta_l^n E_inc(t_n)`` at
        frequency index ``l``."""
        w = scheme.weights(l)
        t = scheme.times

        def incident(pts):
            E, C = self.fields(pts, t)
            return np.einsum("n,pnk->pk", w, E), np.einsum("n,pnk->pk", w, C)

        return ScatteringData(incident=incident)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class CqResult:
    """Time-domain outputs on ``t_0 .. t_N``.

    ``receivers``: (N + 1, R, 3) scattered field; ``j``, ``m``: (N + 1, dim)
    density coefficients; ``E``: (N + 1, n_edges) interior field
    coefficients; ``frequencies``: the solved Laplace parameters.
    """

    times: np.ndarray
    receivers: np.ndarray
    j: np.ndarray
    m: np.ndarray
    E: np.ndarray
    frequencies: np.ndarray
    timings: dict


def cq_run(scheme: CqScheme, incident: IncidentPulse, solver: Callable,
           receivers, spaces, mat, quad=None, progress: Optional[Callable] = None) -> CqResult:
    """Time-domain scattering by CQ.

    ``solver(s, data) -> Solution`` solves the Laplace-domain problem. The
    incident data is real, so only ``L // 2 + 1`` frequencies are solved.
    """
    import time

    receivers = np.atleast_2d(np.asarray(receivers, dtype=float))
    s_all = scheme.frequencies()
    idx = scheme.solved_indices(real=True)
    outs_r, outs_j, outs_m, outs_E = [], [], [], []
    t_solve = 0.0
    for l in idx:
        t0 = time.perf_counter()
        sol: Solution = solver(s_all[l], incident.laplace_data(scheme, l))
        if len(receivers):
            Er, _ = eval_scattered(sol.j, sol.m, receivers, s_all[l], mat, spaces[1], quad)
        else:
            Er = np.zeros((0, 3), complex)
        outs_r.append(Er)
        outs_j.append(sol.j.coeffs)
        outs_m.append(sol.m.coeffs)
        outs_E.append(sol.E)
        t_solve += time.perf_counter() - t0
        if progress is not None:
            progress(l, s_all[l])
    back = lambda arr: scheme.inverse(scheme.complete(np.stack(arr))).real
    return CqResult(scheme.times, back(outs_r), back(outs_j), back(outs_m), back(outs_E),
                    s_all[idx], {"solve_seconds": t_solve})
