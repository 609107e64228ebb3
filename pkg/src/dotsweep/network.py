"""Tight-binding networks attached to an externally driven "dot" site.

A model consists of N network sites (on-site energies, real symmetric
internal couplings) plus one distinguished dot whose on-site energy u is
controlled from outside.  Every site may carry a bond to the dot; one of
those bonds is *tagged* and its current is the observable of interest.

All couplings are real (no magnetic field), so the dot-free network can be
diagonalized with a real orthogonal basis.  In that level basis the whole
system is a star: the dot couples to level n with the effective coupling
c_n = sum_i <eps_n|i> C_i, and the share of the tagged-bond current carried
by level n is the splitting ratio

    lambda_n = <eps_n|a> C_a / c_n

which, unlike a stochastic branching ratio, is not confined to [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelError",
    "NetworkModel",
    "SpectralDecomposition",
    "build_star",
    "build_comb",
    "build_dot_wire_ring",
    "build_random_network",
    "assemble",
    "decompose",
    "splitting_ratios_for_bond",
]

#: relative coupling magnitude below which a level counts as dark (decoupled)
DARK_COUPLING_TOL = 1e-12


class ModelError(ValueError):
    """Raised for inconsistent or unusable network descriptions."""


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NetworkModel:
    """Immutable description of the network attached to the dot.

    Network sites are indexed 0..N-1 here; in assembled Hamiltonians the
    dot occupies row/column 0 and site i sits at row/column i+1.

    onsite        : (N,) on-site energies of the network sites
    couplings     : (N, N) real symmetric internal couplings, zero diagonal
    dot_couplings : (N,) coupling of each site to the dot (C_i)
    tagged_site   : site index a of the observed dot bond; C_a must be nonzero
    """

    onsite: np.ndarray
    couplings: np.ndarray
    dot_couplings: np.ndarray
    tagged_site: int

    def __post_init__(self):
        onsite = _frozen(self.onsite)
        couplings = _frozen(self.couplings)
        dot_couplings = _frozen(self.dot_couplings)
        if onsite.ndim != 1 or onsite.size < 1:
            raise ModelError("onsite must be a vector with at least one site")
        n = onsite.size
        if couplings.shape != (n, n):
            raise ModelError(f"couplings must be {n}x{n}, got {couplings.shape}")
        if dot_couplings.shape != (n,):
            raise ModelError("dot_couplings length must match onsite")
        for arr, name in ((onsite, "onsite"), (couplings, "couplings"),
                          (dot_couplings, "dot_couplings")):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite entries")
        if not np.array_equal(couplings, couplings.T):
            raise ModelError("couplings must be exactly symmetric")
        if np.any(np.diag(couplings) != 0.0):
            raise ModelError("couplings must have zero diagonal")
        tagged = int(self.tagged_site)
        if not 0 <= tagged < n:
            raise ModelError(f"tagged_site {tagged} out of range for {n} sites")
        if dot_couplings[tagged] == 0.0:
            raise ModelError("tagged_site must carry a nonzero dot coupling")
        object.__setattr__(self, "onsite", onsite)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "dot_couplings", dot_couplings)
        object.__setattr__(self, "tagged_site", tagged)

    @property
    def num_sites(self):
        """Number of network sites, excluding the dot."""
        return self.onsite.size

    @property
    def tagged_coupling(self):
        """Coupling C_a of the tagged bond."""
        return float(self.dot_couplings[self.tagged_site])


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenstructure of the dot-free network, star-reduced.

    levels              : (N,) eigenvalues eps_n, strictly ascending order
    vectors             : (N, N) real orthogonal; column n is |eps_n> in sites
    effective_couplings : (N,) c_n = sum_i <eps_n|i> C_i (exactly 0 for dark)
    splitting_ratios    : (N,) lambda_n = <eps_n|a> C_a / c_n; NaN where dark
    dark                : (N,) bool, True where the level is decoupled
    mean_spacing        : mean adjacent gap inside the declared window
    tagged_site         : site index a (copied from the model)
    tagged_coupling     : C_a (copied from the model)

    Dark levels never exchange occupation with the dot, so their splitting
    ratio is undefined (NaN) rather than zero.
    """

    levels: np.ndarray
    vectors: np.ndarray
    effective_couplings: np.ndarray
    splitting_ratios: np.ndarray
    dark: np.ndarray
    mean_spacing: float
    tagged_site: int
    tagged_coupling: float

    def __post_init__(self):
        for name in ("levels", "vectors", "effective_couplings",
                     "splitting_ratios"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "dark", _frozen(self.dark, dtype=bool))

    @property
    def num_levels(self):
        return self.levels.size

    @property
    def coupled(self):
        """Boolean mask of levels with nonzero effective coupling."""
        return ~self.dark

    @property
    def tagged_weights(self):
        """Products lambda_n * c_n = <eps_n|a> C_a, defined for every level."""
        return self.vectors[self.tagged_site] * self.tagged_coupling


def build_star(levels, couplings, tagged_site=None):
    """Star network: isolated sites at the given energies, each bonded only
    to the dot.

    The spectral decomposition of a star returns the inputs unchanged and
    the tagged bond carries the whole current of its level
    (lambda_n = delta_{n,a}).
    """
    levels = np.asarray(levels, dtype=float)
    couplings = np.asarray(couplings, dtype=float)
    if levels.ndim != 1 or levels.shape != couplings.shape:
        raise ModelError("levels and couplings must be equal-length vectors")
    nonzero = np.flatnonzero(couplings)
    if nonzero.size == 0:
        raise ModelError("all couplings vanish: the dot is decoupled")
    if tagged_site is None:
        tagged_site = int(nonzero[0])
    n = levels.size
    return NetworkModel(levels, np.zeros((n, n)), couplings, tagged_site)


def build_comb(num_levels, spacing=1.0, coupling=3.0, first_level=None):
    """Uniform star: levels first_level + spacing*n with identical couplings.

    first_level defaults to `spacing`, i.e. levels at spacing*(1..num_levels).
    """
    if num_levels < 1:
        raise ModelError("num_levels must be at least 1")
    if spacing <= 0:
        raise ModelError("spacing must be positive")
    if first_level is None:
        first_level = spacing
    levels = first_level + spacing * np.arange(num_levels)
    return build_star(levels, np.full(num_levels, float(coupling)))


def build_dot_wire_ring(num_sites, c0, ca, cb):
    """Ring made of a dot closing an open wire of `num_sites` sites.

    The wire has zero on-site energies and nearest-neighbour hopping chosen
    so its spectrum is eps_n = -2*c0*cos(k_n) with k_n = pi*n/(num_sites+1).
    The dot couples to wire site 1 through `ca` (the tagged bond) and to
    wire site N through `cb`.  Effective level couplings alternate as
    sqrt(2/L)*sin(k_n)*(ca +/- cb) with the spatial parity of the level, so
    the splitting ratios take the two values ca/(ca +/- cb).
    """
    n = int(num_sites)
    if n < 2:
        raise ModelError("a dot-wire ring needs at least 2 wire sites")
    if c0 == 0:
        raise ModelError("wire hopping c0 must be nonzero")
    if ca == 0:
        raise ModelError("tagged coupling ca must be nonzero")
    couplings = np.zeros((n, n))
    idx = np.arange(n - 1)
    couplings[idx, idx + 1] = -c0
    couplings[idx + 1, idx] = -c0
    dot = np.zeros(n)
    dot[0] = ca
    dot[-1] = cb
    return NetworkModel(np.zeros(n), couplings, dot, tagged_site=0)


def build_random_network(num_sites, seed, coupling_density=0.7):
    """Dense-ish random symmetric network with every site bonded to the dot.

    Deterministic for a fixed seed; used for seeded property tests and the
    `random` CLI builder.
    """
    n = int(num_sites)
    if n < 1:
        raise ModelError("num_sites must be at least 1")
    rng = np.random.default_rng(seed)
    onsite = rng.uniform(-2.0, 2.0, size=n)
    upper = rng.uniform(-1.0, 1.0, size=(n, n))
    mask = rng.uniform(size=(n, n)) < coupling_density
    couplings = np.triu(upper * mask, k=1)
    couplings = couplings + couplings.T
    signs = rng.choice([-1.0, 1.0], size=n)
    dot = signs * rng.uniform(0.25, 1.5, size=n)
    tagged = int(rng.integers(n))
    return NetworkModel(onsite, couplings, dot, tagged_site=tagged)


def assemble(model, u, phi=0.0):
    """Dense (N+1)x(N+1) Hamiltonian at dot potential u and test flux phi.

    Row/column 0 is the dot.  The flux multiplies the dot->tagged hopping,
    <0|H|a> = C_a e^{i phi}; this orientation makes the geometric
    conductance of a star equal d q_a / du.  At phi = 0 the matrix is real
    symmetric.
    """
    n = model.num_sites
    a = model.tagged_site + 1
    if phi == 0.0:
        h = np.zeros((n + 1, n + 1))
        h[0, 1:] = model.dot_couplings
        h[1:, 0] = model.dot_couplings
    else:
        h = np.zeros((n + 1, n + 1), dtype=complex)
        h[0, 1:] = model.dot_couplings
        h[1:, 0] = model.dot_couplings
        ca = model.tagged_coupling
        h[0, a] = ca * np.exp(1j * phi)
        h[a, 0] = ca * np.exp(-1j * phi)
    h[1:, 1:] = model.couplings
    h[np.arange(1, n + 1), np.arange(1, n + 1)] = model.onsite
    h[0, 0] = u
    return h


def _fix_vector_signs(vectors):
    """Gauge each real eigenvector so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    flip = vectors[idx, np.arange(vectors.shape[1])] < 0
    vectors[:, flip] *= -1.0
    return vectors


def _rotate_degenerate_clusters(levels, vectors, dot_couplings, tol):
    """Within each (near-)degenerate cluster, rotate the basis so exactly one
    combination carries the full dot coupling; the rest decouple exactly."""
    n = levels.size
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and levels[stop] - levels[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            w = block.T @ dot_couplings
            norm = np.linalg.norm(w)
            if norm > 0.0:
                q, _ = np.linalg.qr(w[:, None], mode="complete")
                if q[:, 0] @ w < 0:
                    q[:, 0] *= -1.0
                vectors[:, start:stop] = block @ q
        start = stop
    return vectors


def decompose(model, window=None, degeneracy_tol=1e-9):
    """Diagonalize the dot-free network and derive the star-reduced data.

    window : optional (lo, hi) energy interval over which the mean level
        spacing is evaluated; defaults to the full spectrum.  The spacing is
        the arithmetic mean of adjacent gaps and is NaN when the window holds
        fewer than two levels.

    Degenerate levels that both couple to the dot are rotated so that a
    single combination carries the coupling (reported via a warning); the
    remaining combinations are dark.  Dark levels get c_n = 0 exactly and an
    undefined (NaN) splitting ratio.
    """
    h_net = np.diag(model.onsite) + model.couplings
    levels, vectors = np.linalg.eigh(h_net)

    span = max(1.0, float(levels[-1] - levels[0]))
    gap_tol = degeneracy_tol * span
    if np.any(np.diff(levels) <= gap_tol):
        warnings.warn("degenerate network levels: rotating so a single "
                      "combination per cluster couples to the dot",
                      stacklevel=2)
        vectors = _rotate_degenerate_clusters(levels, vectors,
                                              model.dot_couplings, gap_tol)
    vectors = _fix_vector_signs(vectors)

    c = vectors.T @ model.dot_couplings
    dark = np.abs(c) <= DARK_COUPLING_TOL * np.linalg.norm(model.dot_couplings)
    c = np.where(dark, 0.0, c)

    numer = vectors[model.tagged_site] * model.tagged_coupling
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(dark, np.nan, numer / np.where(dark, 1.0, c))

    if window is None:
        window = (levels[0], levels[-1])
    lo, hi = float(window[0]), float(window[1])
    inside = levels[(levels >= lo) & (levels <= hi)]
    if inside.size >= 2:
        mean_spacing = float(np.mean(np.diff(inside)))
    else:
        mean_spacing = float("nan")

    return SpectralDecomposition(
        levels=levels,
        vectors=vectors,
        effective_couplings=c,
        splitting_ratios=lam,
        dark=dark,
        mean_spacing=mean_spacing,
        tagged_site=model.tagged_site,
        tagged_coupling=model.tagged_coupling,
    )


def splitting_ratios_for_bond(decomp, model, site):
    """Splitting ratios of the dot bond at `site` instead of the tagged one.

    Summed over all dot bonds, the ratios of each coupled level add to 1:
    the per-level flows into all bonds exhaust the current.
    """
    cb = model.dot_couplings[site]
    if cb == 0.0:
        raise ModelError(f"site {site} carries no dot bond")
    numer = decomp.vectors[site] * cb
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(decomp.dark, np.nan,
                        numer / np.where(decomp.dark, 1.0,
                                         decomp.effective_couplings))
