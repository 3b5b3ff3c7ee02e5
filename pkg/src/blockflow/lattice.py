"""Anisotropic periodic space-time lattices and their scaling hierarchy.

A lattice carries two indices: the scale exponent j (temporal spacing
L^-2j, spatial spacing L^-j) and the blocking level n (point counts
L_tp/L^2n and L_sp/L^n per spatial axis).  Time contracts by L^2 per
level, space by L.  All lattices are periodic; fields are complex value
grids over the points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXES = (0, 1, 2, 3)


@dataclass(frozen=True)
class Lattice:
    """Periodic 4D lattice at scale exponent j and blocking level n.

    L_tp and L_sp are the anchor extents of the level-0 unit lattice,
    measured in unit-lattice steps; the point counts of this lattice are
    (L_tp/L^2n, L_sp/L^n, L_sp/L^n, L_sp/L^n).
    """

    L: int
    j: int
    n: int
    L_tp: int
    L_sp: int

    def __post_init__(self):
        if self.L < 3 or self.L % 2 == 0:
            raise ValueError("L must be odd and >= 3")
        if self.L_tp % self.L ** (2 * self.n) or self.L_sp % self.L**self.n:
            raise ValueError(
                f"extents ({self.L_tp},{self.L_sp}) not divisible at blocking level {self.n}"
            )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        nt = self.L_tp // self.L ** (2 * self.n)
        ns = self.L_sp // self.L**self.n
        return (nt, ns, ns, ns)

    @property
    def size(self) -> int:
        nt, ns, _, _ = self.shape
        return nt * ns**3

    @property
    def eps_t(self) -> float:
        return float(self.L) ** (-2 * self.j)

    @property
    def eps_s(self) -> float:
        return float(self.L) ** (-self.j)

    def spacing(self, axis: int) -> float:
        return self.eps_t if axis == 0 else self.eps_s

    @property
    def vol(self) -> float:
        """Measure of a single point: integral = vol * sum."""
        return float(self.L) ** (-5 * self.j)

    @property
    def extent_t(self) -> float:
        return self.shape[0] * self.eps_t

    @property
    def extent_s(self) -> float:
        return self.shape[1] * self.eps_s

    # -- hierarchy neighbours -------------------------------------------------

    def blocked(self) -> "Lattice":
        """Coarse partner under one block-spin step: same extent, spacing
        grows by (L^2, L), one more blocking level."""
        return Lattice(self.L, self.j - 1, self.n + 1, self.L_tp, self.L_sp)

    def refined(self) -> "Lattice":
        """Inverse of blocked()."""
        return Lattice(self.L, self.j + 1, self.n - 1, self.L_tp, self.L_sp)

    def scaled_finer(self) -> "Lattice":
        """Image under the map L^-1: same points, extent shrinks by (L^2, L)."""
        return Lattice(self.L, self.j + 1, self.n, self.L_tp, self.L_sp)

    def scaled_coarser(self) -> "Lattice":
        return Lattice(self.L, self.j - 1, self.n, self.L_tp, self.L_sp)

    # -- points ---------------------------------------------------------------

    def wrap(self, idx) -> tuple[int, int, int, int]:
        """Canonical residue range of a 4-tuple of integer indices."""
        s = self.shape
        return tuple(int(idx[a]) % s[a] for a in AXES)

    def coords(self, idx) -> np.ndarray:
        """Physical coordinates of a point: index times spacing per axis."""
        i = self.wrap(idx)
        return np.array(
            [i[0] * self.eps_t, i[1] * self.eps_s, i[2] * self.eps_s, i[3] * self.eps_s]
        )

    def min_image_delta(self, u, v) -> np.ndarray:
        """Physical displacement v-u, each axis wrapped to the minimum image."""
        s = self.shape
        out = np.empty(4)
        for a in AXES:
            d = (int(v[a]) - int(u[a])) % s[a]
            if d > s[a] // 2:
                d -= s[a]
            out[a] = d * self.spacing(a)
        return out

    def distance(self, u, v) -> float:
        """Periodic minimum-image Euclidean distance on physical coordinates."""
        return float(np.linalg.norm(self.min_image_delta(u, v)))

    def points(self):
        nt, ns, _, _ = self.shape
        for i0 in range(nt):
            for i1 in range(ns):
                for i2 in range(ns):
                    for i3 in range(ns):
                        yield (i0, i1, i2, i3)

    def index_of(self, pt) -> int:
        """Flat row index of a point (C order over shape)."""
        i = self.wrap(pt)
        nt, ns, _, _ = self.shape
        return ((i[0] * ns + i[1]) * ns + i[2]) * ns + i[3]

    def momentum_angles(self, axis: int) -> np.ndarray:
        """FFT angles 2*pi*m/shape[axis]; index-space momenta."""
        return 2.0 * np.pi * np.arange(self.shape[axis]) / self.shape[axis]


@dataclass
class Field:
    """Complex-valued function on a lattice."""

    lattice: Lattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.lattice.shape:
            raise ValueError("field shape does not match lattice")

    def copy(self) -> "Field":
        return Field(self.lattice, self.values.copy())


def constant_field(lat: Lattice, value=1.0) -> Field:
    return Field(lat, np.full(lat.shape, value, dtype=complex))


def delta_field(lat: Lattice, pt) -> Field:
    v = np.zeros(lat.shape, dtype=complex)
    v[lat.wrap(pt)] = 1.0
    return Field(lat, v)


def random_field(lat: Lattice, rng: np.random.Generator) -> Field:
    v = rng.standard_normal(lat.shape) + 1j * rng.standard_normal(lat.shape)
    return Field(lat, v)


def plane_wave(lat: Lattice, m) -> Field:
    """exp(i k.x) with index-space momentum m (k_a = 2 pi m_a / shape_a)."""
    s = lat.shape
    grids = np.meshgrid(*[np.arange(sz) for sz in s], indexing="ij")
    phase = sum(2.0 * np.pi * m[a] * grids[a] / s[a] for a in AXES)
    return Field(lat, np.exp(1j * phase))


def integrate(f: Field) -> complex:
    """Integral over the lattice: vol * sum of values."""
    return complex(f.lattice.vol * f.values.sum())


def pairing(f: Field, g: Field) -> complex:
    """Bilinear form <f,g> = integral of f*g, no conjugation."""
    if f.lattice != g.lattice:
        raise ValueError("pairing requires fields on the same lattice")
    return complex(f.lattice.vol * (f.values * g.values).sum())


def forward_derivative(f: Field, axis: int) -> Field:
    """(f(u + eps e_a) - f(u)) / eps with periodic wraparound."""
    if axis not in AXES:
        raise ValueError(f"axis must be in {AXES}")
    eps = f.lattice.spacing(axis)
    return Field(f.lattice, (np.roll(f.values, -1, axis=axis) - f.values) / eps)


def scale_point_L(lat: Lattice, pt) -> tuple[int, int, int, int]:
    """The map L: (u0, u) -> (L^2 u0, L u); indices are preserved because the
    target lattice spacing absorbs the factor."""
    return lat.scaled_coarser().wrap(pt)


def scale_field_S(f: Field) -> Field:
    """(S f)(u) = L^(3/2) f(L u): maps H_{j-1} to H_j, index arrays unchanged."""
    lat = f.lattice.scaled_finer()
    return Field(lat, f.values * float(f.lattice.L) ** 1.5)


def scale_field_S_inv(f: Field) -> Field:
    lat = f.lattice.scaled_coarser()
    return Field(lat, f.values * float(f.lattice.L) ** -1.5)


def scale_field_S_nu(f: Field, axis: int) -> Field:
    """Scaling for differentiated fields: extra L^2 (time) or L (space) so
    that d_nu(S psi) = S_nu(d_nu psi) holds exactly."""
    lat = f.lattice.scaled_finer()
    extra = float(f.lattice.L) ** (2 if axis == 0 else 1)
    return Field(lat, f.values * float(f.lattice.L) ** 1.5 * extra)


@dataclass(frozen=True)
class Hierarchy:
    """Family of lattices over a fixed physical box (L_tp, L_sp in unit steps)."""

    L: int
    L_tp: int
    L_sp: int

    def lattice(self, j: int, n: int) -> Lattice:
        return Lattice(self.L, j, n, self.L_tp, self.L_sp)

    def unit(self, n: int = 0) -> Lattice:
        """X_0^(n): the n-times blocked unit lattice."""
        return self.lattice(0, n)

    def fine(self, n: int) -> Lattice:
        """X_n: the n-times scaled fine lattice (same point count as X_0)."""
        return self.lattice(n, 0)

    def coarse(self, n: int) -> Lattice:
        """X_-1^(n+1): the coarse blocked lattice below X_0^(n)."""
        return self.lattice(-1, n + 1)

    @property
    def max_level(self) -> int:
        n = 0
        while self.L_tp % self.L ** (2 * (n + 1)) == 0 and self.L_sp % self.L ** (n + 1) == 0:
            n += 1
        return n
