"""Representations of the cyclic groups C_n and of SO(2) on description space.

A :class:`Steerer` holds the matrix of the group generator acting on
descriptions; a :class:`LieGenerator` holds the infinitesimal generator of an
SO(2) representation, which is turned into steerers through the matrix
exponential.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import block_diag, expm

__all__ = [
    "DecompositionError",
    "IrrepBlock",
    "IrrepDecomposition",
    "LieGenerator",
    "PlanarRotation",
    "Steerer",
    "build_fixed_generator",
    "build_fixed_steerer",
    "decompose_irreps",
    "discretize_so2",
    "exp_generator",
    "invariant_projector",
    "random_steerer_init",
    "spectrum",
    "spread_layout",
    "steerer_power",
    "tau_dec",
    "tau_rep",
    "verify_representation",
]

# Rounding corrections larger than this (radians) mark a block non-admissible.
ADMISSIBLE_SLACK = 0.1


def tau_rep(dim: int) -> float:
    """Tolerance for representation identities, linear in the dimension."""
    return 1e-9 * dim


def tau_dec(dim: int) -> float:
    """Tolerance for decomposition round trips, linear in the dimension."""
    return 1e-7 * dim


class DecompositionError(ValueError):
    """Raised when a block decomposition does not reproduce its input."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _check_square(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


@dataclass(frozen=True)
class Steerer:
    """Matrix of the generator of C_n acting on a D-dimensional description space."""

    matrix: np.ndarray
    group_order: int

    def __post_init__(self):
        m = _check_square(self.matrix)
        if int(self.group_order) < 1:
            raise ValueError(f"group order must be positive, got {self.group_order}")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "group_order", int(self.group_order))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def power(self, k: int) -> np.ndarray:
        return steerer_power(self, k)

    def powers(self) -> list[np.ndarray]:
        """All powers 0..n-1, computed by repeated multiplication."""
        out = [np.eye(self.dim)]
        for _ in range(1, self.group_order):
            out.append(self.matrix @ out[-1])
        return out


@dataclass(frozen=True)
class LieGenerator:
    """Infinitesimal generator of an SO(2) representation."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _check_square(self.matrix).copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PlanarRotation:
    """Anticlockwise rotation of the plane; quarter turns are represented exactly."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % (2 * math.pi))

    @classmethod
    def quarter(cls, k: int) -> "PlanarRotation":
        return cls((k % 4) * math.pi / 2)

    @property
    def matrix(self) -> np.ndarray:
        c, s = _exact_cos_sin(self.angle)
        return np.array([[c, -s], [s, c]])


def _exact_cos_sin(angle: float) -> tuple[float, float]:
    q = angle / (math.pi / 2)
    k = round(q)
    if abs(q - k) < 1e-12:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(angle), math.sin(angle)


R90 = np.array([[0.0, -1.0], [1.0, 0.0]])
_PERM_BLOCK = np.array([[0.0, 1.0, 0.0, 0.0],
                        [0.0, 0.0, 1.0, 0.0],
                        [0.0, 0.0, 0.0, 1.0],
                        [1.0, 0.0, 0.0, 0.0]])


def build_fixed_steerer(kind: str, dimension: int) -> Steerer:
    """Fixed C_4 steerers: ``inv`` (identity), ``freq1`` (quarter-turn blocks), ``perm``."""
    kind = kind.lower()
    if dimension < 1:
        raise ValueError("dimension must be positive")
    if kind == "inv":
        return Steerer(np.eye(dimension), 4)
    if kind == "freq1":
        if dimension % 2:
            raise ValueError(f"freq1 steerer needs an even dimension, got {dimension}")
        return Steerer(block_diag([R90] * (dimension // 2)), 4)
    if kind == "perm":
        if dimension % 4:
            raise ValueError(f"perm steerer needs a dimension divisible by 4, got {dimension}")
        return Steerer(block_diag([_PERM_BLOCK] * (dimension // 4)), 4)
    raise ValueError(f"unknown steerer kind {kind!r}")


def spread_layout(dimension: int, max_frequency: int = 6) -> tuple[int, dict[int, int]]:
    """Number of invariant dimensions and 2x2 blocks per frequency for a Spread generator.

    For D = 256 this is 40 invariant dimensions and 18 blocks for each of the
    frequencies 1..6. Other dimensions use ceil(0.16 D) invariant dimensions,
    lowered until the rest splits into 2x2 blocks, shared equally between the
    frequencies with the remainder going to frequency 1.
    """
    n_inv = math.ceil(0.16 * dimension)
    while (dimension - n_inv) % 2:
        n_inv -= 1
    n_blocks = (dimension - n_inv) // 2
    per, extra = divmod(n_blocks, max_frequency)
    counts = {j: per for j in range(1, max_frequency + 1)}
    counts[1] += extra
    return n_inv, counts


def build_fixed_generator(kind: str, dimension: int, *, generalize: bool = False) -> LieGenerator:
    """Fixed SO(2) generators: ``inv`` (zero), ``freq1``, ``spread``.

    ``spread`` is only defined for D = 256 unless ``generalize`` is set, in
    which case :func:`spread_layout` decides the block counts.
    """
    kind = kind.lower()
    if dimension < 1:
        raise ValueError("dimension must be positive")
    if kind == "inv":
        return LieGenerator(np.zeros((dimension, dimension)))
    if kind == "freq1":
        if dimension % 2:
            raise ValueError(f"freq1 generator needs an even dimension, got {dimension}")
        return LieGenerator(block_diag([R90] * (dimension // 2)))
    if kind == "spread":
        if dimension != 256 and not generalize:
            raise ValueError(
                f"spread generator is defined for D=256; got {dimension} (pass generalize=True)")
        n_inv, counts = spread_layout(dimension)
        blocks = [np.zeros((n_inv, n_inv))] if n_inv else []
        for j, count in counts.items():
            blocks += [j * R90] * count
        return LieGenerator(block_diag(blocks))
    raise ValueError(f"unknown generator kind {kind!r}")


def _generator_matrix(gen) -> np.ndarray:
    return gen.matrix if isinstance(gen, LieGenerator) else _check_square(gen)


def exp_generator(gen, angle: float) -> np.ndarray:
    """SO(2) steerer at ``angle``: expm(angle * generator)."""
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    return expm(angle * _generator_matrix(gen))


def discretize_so2(gen, order: int) -> Steerer:
    """C_order steerer generated by expm((2 pi / order) * generator)."""
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    return Steerer(exp_generator(gen, 2 * math.pi / order), order)


def steerer_power(s: Steerer, k: int) -> np.ndarray:
    n = s.group_order
    return np.linalg.matrix_power(s.matrix, ((int(k) % n) + n) % n)


def verify_representation(s: Steerer) -> float:
    """Frobenius distance of matrix^n from the identity."""
    return float(np.linalg.norm(steerer_power_raw(s.matrix, s.group_order) - np.eye(s.dim)))


def steerer_power_raw(matrix: np.ndarray, k: int) -> np.ndarray:
    return np.linalg.matrix_power(np.asarray(matrix, dtype=np.float64), k)


def random_steerer_init(dimension: int, seed=None) -> np.ndarray:
    """Entries i.i.d. uniform in (-D^-1/2, D^-1/2), the default linear-layer init."""
    if dimension < 1:
        raise ValueError("dimension must be positive")
    bound = dimension ** -0.5
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(dimension, dimension))


def invariant_projector(s: Steerer) -> np.ndarray:
    """Group average (1/n) sum_k matrix^k, the projector onto invariant descriptions."""
    residual = verify_representation(s)
    if residual > tau_rep(s.dim):
        raise ValueError(
            f"steerer is not a representation of C_{s.group_order} (residual {residual:.3e})")
    return sum(s.powers()) / s.group_order


def spectrum(matrix) -> np.ndarray:
    """All eigenvalues from the real Schur form, sorted by modulus then argument."""
    A = _check_square(matrix)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    T = scipy.linalg.schur(A, output="real")[0]
    eig = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            a, b, c, d = T[i, i], T[i, i + 1], T[i + 1, i], T[i + 1, i + 1]
            mean = 0.5 * (a + d)
            disc = np.sqrt(complex(0.25 * (a - d) ** 2 + b * c))
            eig += [mean + disc, mean - disc]
            i += 2
        else:
            eig.append(complex(T[i, i]))
            i += 1
    return _sort_eigenvalues(np.array(eig, dtype=complex))


def _sort_eigenvalues(eig: np.ndarray) -> np.ndarray:
    mod = np.round(np.abs(eig), 10)
    arg = np.round(np.angle(eig), 10)
    return eig[np.lexsort((arg, mod))]


@dataclass(frozen=True)
class IrrepBlock:
    """One 1x1 or 2x2 block of a real block-diagonal decomposition.

    ``eigenvalue`` is the measured eigenvalue (upper half plane for 2x2
    blocks); ``frequency`` is its rounded, non-negative frequency and
    ``admissible`` is False when the rounding had to move it by more than
    0.1 rad or its modulus is off by more than 0.1.
    """

    size: int
    frequency: int
    eigenvalue: complex
    admissible: bool = True

    @property
    def matrix(self) -> np.ndarray:
        a, b = self.eigenvalue.real, self.eigenvalue.imag
        if self.size == 1:
            return np.array([[a]])
        return np.array([[a, -b], [b, a]])


@dataclass(frozen=True)
class IrrepDecomposition:
    """``matrix = inv(basis) @ blockdiag(blocks) @ basis``."""

    basis: np.ndarray
    blocks: tuple[IrrepBlock, ...]
    group: str
    residual: float
    columns: np.ndarray = field(repr=False, default=None)

    @property
    def frequencies(self) -> list[int]:
        """Frequency of every dimension (a 2x2 block contributes two entries)."""
        out = []
        for b in self.blocks:
            out += [b.frequency] * b.size
        return out

    def histogram(self) -> dict[int, int]:
        """Number of description dimensions per frequency."""
        return dict(sorted(Counter(self.frequencies).items()))

    def block_matrix(self) -> np.ndarray:
        return block_diag([b.matrix for b in self.blocks])

    def reconstruct(self) -> np.ndarray:
        return self.columns @ self.block_matrix() @ self.basis

    @property
    def non_admissible(self) -> list[IrrepBlock]:
        return [b for b in self.blocks if not b.admissible]


def _parse_group(group) -> tuple[str, int | None]:
    if isinstance(group, int):
        return f"C{group}", group
    g = str(group).strip().lower()
    if g in ("so2", "so(2)", "so2-generator", "generator"):
        return "SO2", None
    if g.startswith("c") and g[1:].isdigit() and int(g[1:]) >= 1:
        return f"C{int(g[1:])}", int(g[1:])
    raise ValueError(f"unknown group {group!r}; use 'C<n>' or 'SO2'")


def _classify(lam: complex, order: int | None, size: int) -> tuple[int, bool]:
    if order is None:
        j = round(abs(lam.imag))
        ok = abs(abs(lam.imag) - j) <= ADMISSIBLE_SLACK and abs(lam.real) <= ADMISSIBLE_SLACK
        return int(j), ok
    quantum = 2 * math.pi / order
    theta = abs(math.atan2(lam.imag, lam.real))
    j = round(theta / quantum)
    ok = abs(theta - j * quantum) <= ADMISSIBLE_SLACK and abs(abs(lam) - 1.0) <= ADMISSIBLE_SLACK
    return int(j), ok


def _clusters(values: np.ndarray, tol: float) -> list[list[int]]:
    """Group indices whose values lie within ``tol`` of a cluster's first member."""
    order = np.lexsort((values.imag, values.real))
    clusters: list[list[int]] = []
    for idx in order:
        for c in clusters:
            if abs(values[idx] - values[c[0]]) <= tol:
                c.append(int(idx))
                break
        else:
            clusters.append([int(idx)])
    return clusters


def decompose_irreps(matrix, group="C4") -> IrrepDecomposition:
    """Real block-diagonalization of a C_n steerer or an SO(2) generator.

    Eigenvectors are grouped by eigenvalue, orthonormalized within each
    eigenspace and converted into real 1x1 blocks (real eigenvalues) or 2x2
    rotation-type blocks (conjugate pairs, taken with positive imaginary part
    so every block rotates anticlockwise). Raises :class:`DecompositionError`
    if ``inv(basis) @ B @ basis`` misses the input by more than ``tau_dec``.
    """
    A = _check_square(matrix)
    name, order = _parse_group(group)
    D = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(A))) if D else 1.0)
    lam, vec = np.linalg.eig(A)
    real_tol = 1e-7 * scale
    cluster_tol = 1e-5 * scale

    entries = []  # (frequency, size, first index, block, columns)
    is_real = np.abs(lam.imag) <= real_tol
    real_idx = np.flatnonzero(is_real)
    upper_idx = np.flatnonzero(~is_real & (lam.imag > 0))

    for cl in _clusters(lam[real_idx].real.astype(complex), cluster_tol):
        # a near-real conjugate pair contributes its Re/Im parts to the real eigenspace
        idx = real_idx[cl]
        V = vec[:, idx]
        stacked = np.hstack([V.real, V.imag])
        U = np.linalg.svd(stacked, full_matrices=False)[0]
        cols = U[:, : len(idx)]
        value = complex(float(np.mean(lam[idx].real)), 0.0)
        for c in range(cols.shape[1]):
            j, ok = _classify(value, order, 1)
            entries.append((j, 1, int(idx[0]) * D + c, IrrepBlock(1, j, value, ok), cols[:, [c]]))

    for cl in _clusters(lam[upper_idx], cluster_tol):
        idx = upper_idx[cl]
        Qc, _ = np.linalg.qr(vec[:, idx])
        value = complex(np.mean(lam[idx]))
        for c in range(Qc.shape[1]):
            q = Qc[:, c] * math.sqrt(2.0)
            j, ok = _classify(value, order, 2)
            entries.append((j, 2, int(idx[0]) * D + c, IrrepBlock(2, j, value, ok),
                            np.column_stack([q.real, -q.imag])))

    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    blocks = tuple(e[3] for e in entries)
    if entries:
        Z = np.hstack([e[4] for e in entries])
    else:
        Z = np.zeros((0, 0))
    if Z.shape[1] != D:
        raise DecompositionError("eigenvector bookkeeping lost dimensions", float("inf"))
    try:
        basis = np.linalg.inv(Z)
    except np.linalg.LinAlgError:
        raise DecompositionError("eigenvector matrix is singular", float("inf")) from None
    B = block_diag([b.matrix for b in blocks])
    residual = float(np.linalg.norm(Z @ B @ basis - A))
    if not np.isfinite(residual) or residual > tau_dec(D):
        raise DecompositionError("matrix is not diagonalizable to tolerance", residual)
    return IrrepDecomposition(basis=basis, blocks=blocks, group=name, residual=residual, columns=Z)
