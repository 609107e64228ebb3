"""Instantaneous eigenstructure along a dot sweep.

Star-reduced secular machinery: with effective couplings c_n and levels
eps_n, the adiabatic energies at dot potential u are the solutions of

    g(E) = E - u,        g(E) = sum_n c_n^2 / (E - eps_n)

one in each open interval between adjacent coupled poles plus two outside.
The dot occupation on a branch is p = [1 - g'(E)]^{-1}, the level
occupations are q_n = (c_n / (E - eps_n))^2 p, and the branch energy obeys
dE/du = p.

The geometric conductance G (current per unit sweep rate) is computed two
independent ways: from the flux sensitivity of the eigenstate (finite
differences of the dense Hamiltonian) and from the analytic derivative of
the splitting-weighted occupation sum; the two must agree.

The closed forms for a two-parity quasi-continuum (levels on a uniform comb
with alternating couplings c+ and c-) live at the bottom of the module.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PoleError",
    "AdiabaticBranch",
    "ContinuumParams",
    "self_energy",
    "self_energy_deriv",
    "self_energy_second",
    "secular_roots",
    "branch_interval",
    "branch_occupations",
    "trace_branch",
    "occupation_derivatives",
    "splitting_conductance",
    "berry_curvature",
    "comb_self_energy",
    "comb_self_energy_deriv",
    "comb_self_energy_second",
    "comb_branch_energy",
    "comb_dot_occupation",
    "comb_splitting_sum",
    "comb_conductance",
    "distorted_lorentzian",
    "collective_peak_conductance",
]


class PoleError(ValueError):
    """Raised when an energy coincides with a coupled network level."""


# ---------------------------------------------------------------------------
# finite-sum secular machinery


def _coupled(decomp):
    mask = decomp.coupled
    return decomp.levels[mask], decomp.effective_couplings[mask]


def self_energy(decomp, energy):
    """g(E) = sum over coupled levels of c_n^2 / (E - eps_n)."""
    eps, c = _coupled(decomp)
    e = np.asarray(energy, dtype=float)
    diff = e[..., None] - eps
    scale = np.maximum(1.0, np.abs(e))[..., None]
    if np.any(np.abs(diff) < 1e-13 * scale):
        raise PoleError("energy coincides with a coupled network level")
    return np.sum(c**2 / diff, axis=-1)


def self_energy_deriv(decomp, energy):
    """g'(E) = -sum c_n^2 / (E - eps_n)^2 (always negative)."""
    eps, c = _coupled(decomp)
    diff = np.asarray(energy, dtype=float)[..., None] - eps
    return -np.sum(c**2 / diff**2, axis=-1)


def self_energy_second(decomp, energy):
    """g''(E) = 2 sum c_n^2 / (E - eps_n)^3."""
    eps, c = _coupled(decomp)
    diff = np.asarray(energy, dtype=float)[..., None] - eps
    return 2.0 * np.sum(c**2 / diff**3, axis=-1)


def _brackets(decomp, u):
    """Interval endpoints enclosing each secular root for potential(s) u."""
    eps, c = _coupled(decomp)
    cnorm = np.linalg.norm(c)
    lo = min(np.min(u), eps[0] - 1.0) - cnorm - 1.0
    hi = max(np.max(u), eps[-1] + 1.0) + cnorm + 1.0
    return np.concatenate(([lo], eps)), np.concatenate((eps, [hi]))


def _solve_intervals(decomp, u, lower, upper):
    """Vectorized bisection + Newton polish for f(E) = g(E) - E + u on a set
    of intervals.  f is strictly decreasing on each interval (g' < 0), which
    makes both stages bracket-safe."""
    eps, c = _coupled(decomp)
    c2 = c**2

    def f(e):
        return np.sum(c2 / (e[..., None] - eps), axis=-1) - e + u

    span = np.maximum(upper - lower, 1e-300)
    inset = 1e-14 * np.maximum(1.0, np.maximum(np.abs(lower), np.abs(upper)))
    a = lower + np.minimum(inset, 0.25 * span)
    b = upper - np.minimum(inset, 0.25 * span)
    for _ in range(70):
        mid = 0.5 * (a + b)
        pos = f(mid) > 0.0
        a = np.where(pos, mid, a)
        b = np.where(pos, b, mid)
    root = 0.5 * (a + b)
    for _ in range(4):
        fr = f(root)
        deriv = -np.sum(c2 / (root[..., None] - eps)**2, axis=-1) - 1.0
        step = fr / deriv
        cand = root - step
        ok = (cand > a) & (cand < b)
        root = np.where(ok, cand, root)
    return root


def secular_roots(decomp, u):
    """All solutions of g(E) = E - u, ascending (one per pole interval).

    For M coupled levels there are M + 1 roots; dark levels do not produce
    poles and are not represented here (they stay exact eigenvalues of the
    full Hamiltonian regardless of u).
    """
    u = float(u)
    lower, upper = _brackets(decomp, u)
    return _solve_intervals(decomp, u, lower, upper)


def branch_interval(decomp, branch):
    """Pole pair (eps_low, eps_high) confining a branch; +-inf outside."""
    eps, _ = _coupled(decomp)
    m = eps.size
    if not 0 <= branch <= m:
        raise ValueError(f"branch must be in 0..{m}")
    lo = -np.inf if branch == 0 else eps[branch - 1]
    hi = np.inf if branch == m else eps[branch]
    return lo, hi


def _branch_roots(decomp, u, branch):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lower, upper = _brackets(decomp, np.max(u))
    lo = np.full(u.shape, lower[branch])
    hi = np.full(u.shape, upper[branch])
    if branch == 0:
        eps, c = _coupled(decomp)
        lo = np.minimum(u, eps[0] - 1.0) - np.linalg.norm(c) - 1.0
    if branch == eps_count(decomp):
        eps, c = _coupled(decomp)
        hi = np.maximum(u, eps[-1] + 1.0) + np.linalg.norm(c) + 1.0
    return _solve_intervals(decomp, u, lo, hi)


def eps_count(decomp):
    return int(np.count_nonzero(decomp.coupled))


def branch_occupations(decomp, u, branch):
    """(E, p, q) on one adiabatic branch at potential u.

    p = [1 - g'(E)]^{-1} and q_n = (c_n/(E-eps_n))^2 p, so p + sum q = 1 is
    an identity of the construction.  q is reported over all levels; dark
    entries are zero (branch eigenstates have no dark admixture).
    """
    e = float(_branch_roots(decomp, float(u), branch)[0])
    p = 1.0 / (1.0 - self_energy_deriv(decomp, e))
    q = np.zeros(decomp.num_levels)
    mask = decomp.coupled
    diff = e - decomp.levels[mask]
    q[mask] = (decomp.effective_couplings[mask] / diff) ** 2 * p
    return e, float(p), q


@dataclass(frozen=True)
class AdiabaticBranch:
    """Sampled adiabatic branch: arrays over a u grid plus its pole bracket."""

    branch_index: int
    u: np.ndarray
    energy: np.ndarray
    dot_occupation: np.ndarray
    occupations: np.ndarray  # (len(u), N)
    bracket: tuple


def trace_branch(decomp, u_grid, branch):
    """Follow one branch over a potential grid (vectorized root finding)."""
    u = np.asarray(u_grid, dtype=float)
    e = _branch_roots(decomp, u, branch)
    p = 1.0 / (1.0 - self_energy_deriv(decomp, e))
    mask = decomp.coupled
    diff = e[:, None] - decomp.levels[mask]
    q = np.zeros((u.size, decomp.num_levels))
    q[:, mask] = (decomp.effective_couplings[mask] / diff) ** 2 * p[:, None]
    return AdiabaticBranch(branch_index=int(branch), u=u, energy=e,
                           dot_occupation=p, occupations=q,
                           bracket=branch_interval(decomp, branch))


def occupation_derivatives(decomp, u, branch):
    """d q_n / du along a branch, from the implicit derivative dE/du = p."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    e = _branch_roots(decomp, u, branch)
    p = 1.0 / (1.0 - self_energy_deriv(decomp, e))
    gpp = self_energy_second(decomp, e)
    mask = decomp.coupled
    diff = e[:, None] - decomp.levels[mask]
    c2 = decomp.effective_couplings[mask] ** 2
    dq = np.zeros((u.size, decomp.num_levels))
    # dq/du = p * d/dE [ c^2/(E-eps)^2 * p ],  dp/dE = g'' p^2
    dq[:, mask] = (c2 * p[:, None] ** 2
                   * (gpp[:, None] * p[:, None] / diff**2 - 2.0 / diff**3))
    return dq if dq.shape[0] > 1 else dq[0]


def splitting_conductance(decomp, u, branch):
    """Geometric conductance through the tagged bond on one branch,
    G = d/du [ sum_n lambda_n q_n ], evaluated analytically.

    Dark levels carry zero weight here (they never change occupation), so
    undefined splitting ratios cannot contaminate the sum.
    """
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    e = _branch_roots(decomp, u_arr, branch)
    p = 1.0 / (1.0 - self_energy_deriv(decomp, e))
    gpp = self_energy_second(decomp, e)
    mask = decomp.coupled
    diff = e[:, None] - decomp.levels[mask]
    lam_c = decomp.splitting_ratios[mask] * decomp.effective_couplings[mask]
    w = lam_c * decomp.effective_couplings[mask]  # lambda_n c_n^2
    a_sum = np.sum(w / diff**2, axis=-1)
    a_deriv = -2.0 * np.sum(w / diff**3, axis=-1)
    g = p**2 * (gpp * p * a_sum + a_deriv)
    return g if g.shape[0] > 1 else float(g[0])


# ---------------------------------------------------------------------------
# geometric conductance from flux sensitivity


def _aligned_eigenvector(h, branch, reference):
    vals, vecs = np.linalg.eigh(h)
    v = vecs[:, branch]
    overlap = np.vdot(reference, v)
    mag = np.abs(overlap)
    if mag < 1e-12:
        raise ValueError("eigenvector changed too much across the stencil; "
                         "reduce the step sizes")
    return vals, v * (np.conj(overlap) / mag)


def _curvature_stencil(model, u, branch, du, dphi, reference):
    from dotsweep.network import assemble

    _, v_up = _aligned_eigenvector(assemble(model, u + du), branch, reference)
    _, v_dn = _aligned_eigenvector(assemble(model, u - du), branch, reference)
    _, v_pp = _aligned_eigenvector(assemble(model, u, dphi), branch, reference)
    _, v_pm = _aligned_eigenvector(assemble(model, u, -dphi), branch,
                                   reference)
    d_u = (v_up - v_dn) / (2.0 * du)
    d_phi = (v_pp - v_pm) / (2.0 * dphi)
    return 2.0 * np.imag(np.vdot(d_phi, d_u))


def berry_curvature(model, u, branch, du=None, dphi=1e-4, refine=True,
                    gap_warning=1e-8):
    """Geometric conductance 2 Im <d_phi Psi | d_u Psi> at phi = 0.

    Central finite differences with phase-aligned eigenvectors (each stencil
    vector is rotated to have a real positive overlap with the u-centred,
    zero-flux reference).  One Richardson halving step is applied by
    default, giving O(du^2 + dphi^2) convergence before extrapolation.
    """
    from dotsweep.network import assemble

    u = float(u)
    if du is None:
        du = 1e-4 * max(1.0, abs(u))
    vals, vecs = np.linalg.eigh(assemble(model, u))
    reference = vecs[:, branch].astype(complex)
    gaps = []
    if branch > 0:
        gaps.append(vals[branch] - vals[branch - 1])
    if branch < vals.size - 1:
        gaps.append(vals[branch + 1] - vals[branch])
    if gaps and min(gaps) < gap_warning:
        warnings.warn(f"tracked branch is nearly degenerate (gap "
                      f"{min(gaps):.3e}); curvature may be inaccurate",
                      stacklevel=2)
    g_full = _curvature_stencil(model, u, branch, du, dphi, reference)
    if not refine:
        return g_full
    g_half = _curvature_stencil(model, u, branch, du / 2, dphi / 2, reference)
    return (4.0 * g_half - g_full) / 3.0


# ---------------------------------------------------------------------------
# two-parity quasi-continuum closed forms


@dataclass(frozen=True)
class ContinuumParams:
    """Effective description of a dot coupled to a two-parity comb.

    Levels sit on a uniform comb of spacing delta; even-parity levels carry
    coupling c_plus, odd-parity levels c_minus (bond couplings absorbed so
    that c_+- = (ca +- cb)/sqrt(2)).  Derived quantities:

        c_eff      = (pi/2) c_+ c_- / delta
        gamma      = pi (c_+^2 + c_-^2) / delta
        sin(theta) = (c_+^2 - c_-^2) / (c_+^2 + c_-^2)
    """

    c_plus: float
    c_minus: float
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @classmethod
    def from_bond_couplings(cls, ca, cb, delta):
        root2 = np.sqrt(2.0)
        return cls((ca + cb) / root2, (ca - cb) / root2, float(delta))

    @property
    def c_eff(self):
        return 0.5 * np.pi * self.c_plus * self.c_minus / self.delta

    @property
    def gamma(self):
        return np.pi * (self.c_plus**2 + self.c_minus**2) / self.delta

    @property
    def theta(self):
        return float(np.arcsin((self.c_plus**2 - self.c_minus**2)
                               / (self.c_plus**2 + self.c_minus**2)))

    @property
    def lam_plus(self):
        """Splitting ratio of even-parity (c_plus) levels, ca/(ca+cb)."""
        return (self.c_plus + self.c_minus) / (2.0 * self.c_plus)

    @property
    def lam_minus(self):
        """Splitting ratio of odd-parity (c_minus) levels, ca/(ca-cb)."""
        return (self.c_plus + self.c_minus) / (2.0 * self.c_minus)


def _comb_angles(params, energy):
    x = 0.5 * np.pi * np.asarray(energy, dtype=float) / params.delta
    s, c = np.sin(x), np.cos(x)
    if np.any(np.abs(s) < 1e-12) and params.c_minus != 0.0:
        raise PoleError("energy sits on an odd-parity comb level")
    if np.any(np.abs(c) < 1e-12) and params.c_plus != 0.0:
        raise PoleError("energy sits on an even-parity comb level")
    return s, c


def comb_self_energy(params, energy):
    """Infinite-comb g(E): odd-parity levels at even multiples of delta,
    even-parity levels at odd multiples.

        g(E) = (pi/2 delta) [ c_-^2 cot(pi E / 2 delta)
                              - c_+^2 tan(pi E / 2 delta) ]
    """
    s, c = _comb_angles(params, energy)
    k = 0.5 * np.pi / params.delta
    return k * (params.c_minus**2 * c / s - params.c_plus**2 * s / c)


def comb_self_energy_deriv(params, energy):
    s, c = _comb_angles(params, energy)
    k = 0.5 * np.pi / params.delta
    return -(k**2) * (params.c_minus**2 / s**2 + params.c_plus**2 / c**2)


def comb_self_energy_second(params, energy):
    s, c = _comb_angles(params, energy)
    k = 0.5 * np.pi / params.delta
    return 2.0 * k**3 * (params.c_minus**2 * c / s**3
                         - params.c_plus**2 * s / c**3)


#: default induction branch of the comb: the particle starts on the
#: even-parity level at E0 = delta and is carried to the odd-parity level
#: at 2*delta.
def comb_branch_energy(params, u, bracket=None):
    """Branch energy E(u) of the comb, from u = E - g(E) on one interval.

    `bracket` is the (lo, hi) pole pair confining the branch; defaults to
    (delta, 2*delta), the induction branch starting on the even-parity
    level at E0 = delta.
    """
    if bracket is None:
        bracket = (params.delta, 2.0 * params.delta)
    lo, hi = bracket
    u = np.atleast_1d(np.asarray(u, dtype=float))
    span = hi - lo
    a = np.full(u.shape, lo + 1e-15 * span)
    b = np.full(u.shape, hi - 1e-15 * span)
    for _ in range(80):
        mid = 0.5 * (a + b)
        # u(E) = E - g(E) is strictly increasing on the interval
        pos = mid - comb_self_energy(params, mid) < u
        a = np.where(pos, mid, a)
        b = np.where(pos, b, mid)
    e = 0.5 * (a + b)
    return e if e.size > 1 else float(e[0])


def comb_dot_occupation(params, u, bracket=None):
    """Exact dot occupation p(u) on a comb branch."""
    e = np.atleast_1d(comb_branch_energy(params, u, bracket))
    p = 1.0 / (1.0 - comb_self_energy_deriv(params, e))
    return p if p.size > 1 else float(p[0])


def _comb_weighted(params, energy):
    """A(E) = sum lambda_n c_n^2 / (E - eps_n)^2 and its derivative."""
    s, c = _comb_angles(params, energy)
    k = 0.5 * np.pi / params.delta
    w_minus = params.lam_minus * params.c_minus**2
    w_plus = params.lam_plus * params.c_plus**2
    a_sum = k**2 * (w_minus / s**2 + w_plus / c**2)
    a_deriv = 2.0 * k**3 * (-w_minus * c / s**3 + w_plus * s / c**3)
    return a_sum, a_deriv


def comb_splitting_sum(params, u, bracket=None):
    """sum_n lambda_n q_n on the branch; runs from lam_plus to lam_minus."""
    e = np.atleast_1d(comb_branch_energy(params, u, bracket))
    p = 1.0 / (1.0 - comb_self_energy_deriv(params, e))
    a_sum, _ = _comb_weighted(params, e)
    out = p * a_sum
    return out if out.size > 1 else float(out[0])


def comb_conductance(params, u, bracket=None):
    """Exact geometric conductance G(u) = d/du [sum lambda_n q_n] on a comb
    branch, assembled from the closed forms."""
    e = np.atleast_1d(comb_branch_energy(params, u, bracket))
    p = 1.0 / (1.0 - comb_self_energy_deriv(params, e))
    gpp = comb_self_energy_second(params, e)
    a_sum, a_deriv = _comb_weighted(params, e)
    g = p**2 * (gpp * p * a_sum + a_deriv)
    return g if g.size > 1 else float(g[0])


def distorted_lorentzian(x, gamma, theta):
    """Asymmetric line shape L[x; gamma, theta]; integrates to 1 over R.

        L = (1/pi) [1 + sin(theta) x / sqrt(x^2 + cos^2(theta) (gamma/2)^2)]^{-1}
            * cos^2(theta) (gamma/2) / (x^2 + cos^2(theta) (gamma/2)^2)

    theta = 0 recovers the plain Lorentzian of width gamma.
    """
    sin_t = np.sin(theta)
    if abs(sin_t) >= 1.0 - 1e-15:
        raise ValueError("|sin(theta)| = 1: one parity is decoupled and the "
                         "line shape degenerates")
    x = np.asarray(x, dtype=float)
    cos2 = np.cos(theta) ** 2
    half = 0.5 * gamma
    denom = x**2 + cos2 * half**2
    skew = 1.0 + sin_t * x / np.sqrt(denom)
    return (1.0 / np.pi) * cos2 * half / (denom * skew)


def collective_peak_conductance(params, lam_minus, lam_plus, u, e0):
    """Single-crossing form of the collective conductance peak,

        G(u) = (lam_- - lam_+) * 2 c_eff^2 / (4 c_eff^2 + (u - E)^2)^{3/2}

    which integrates exactly to lam_- - lam_+ over the whole sweep.
    """
    c_eff = params.c_eff
    if c_eff <= 0:
        raise ValueError("c_eff must be positive")
    x = np.asarray(u, dtype=float) - e0
    return (lam_minus - lam_plus) * 2.0 * c_eff**2 \
        / (4.0 * c_eff**2 + x**2) ** 1.5
