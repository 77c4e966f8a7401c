"""Fitting steerers to descriptions of rotated images, and analysing fitted steerers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur

from .group_reps import LieGenerator, Steerer
from .linalg import expm, logm_real, polar_orthogonal
from .matcher import MatcherConfig, dual_softmax

__all__ = [
    "BranchAmbiguityError",
    "CorrespondenceBatch",
    "CorrespondencePair",
    "DegenerateFitError",
    "FitResult",
    "GeneratorFit",
    "GramRecovery",
    "HypothesisViolatedError",
    "UnderdeterminedError",
    "eval_match_likelihood",
    "fit_generator",
    "fit_steerer_anchored",
    "fit_steerer_orthogonal",
    "prune_by_eigenvalue",
    "recover_orthogonal_from_gram",
]

TAU_GRAM = 1e-6


class UnderdeterminedError(ValueError):
    pass


class DegenerateFitError(ValueError):
    def __init__(self, message: str, rank: int):
        super().__init__(f"{message} (rank {rank})")
        self.rank = rank


class BranchAmbiguityError(ValueError):
    pass


class HypothesisViolatedError(ValueError):
    """Inner products of the samples are not preserved by the group action."""

    def __init__(self, worst_pair: tuple[int, int], deviation: float):
        super().__init__(f"Gram matrix not preserved: pair {worst_pair} deviates by {deviation:.3e}")
        self.worst_pair = worst_pair
        self.deviation = deviation


@dataclass(frozen=True)
class CorrespondencePair:
    """Descriptions of the same keypoints before and after a known rotation.

    ``k`` counts generator steps (quarter turns for C_4); ``angle`` is in radians.
    """

    before: np.ndarray
    after: np.ndarray
    k: int | None = None
    angle: float | None = None

    def __post_init__(self):
        b = np.asarray(self.before, dtype=np.float64)
        a = np.asarray(self.after, dtype=np.float64)
        if b.ndim != 2 or b.shape != a.shape:
            raise ValueError(f"before/after must be equal-shape D x N matrices: {b.shape} vs {a.shape}")
        object.__setattr__(self, "before", b)
        object.__setattr__(self, "after", a)


@dataclass
class CorrespondenceBatch:
    pairs: list[CorrespondencePair] = field(default_factory=list)

    def __post_init__(self):
        dims = {p.before.shape[0] for p in self.pairs}
        if len(dims) > 1:
            raise ValueError(f"all pairs must share the description dimension, got {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.pairs[0].before.shape[0]

    def add(self, before, after, *, k=None, angle=None) -> None:
        self.pairs.append(CorrespondencePair(before, after, k, angle))
        self.__post_init__()


@dataclass(frozen=True)
class FitResult:
    steerer: Steerer
    residual: float
    orthogonality_defect: float
    rank: int


def _rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > 1e-10 * max(s[0], 1e-300))) if len(s) else 0


def fit_steerer_orthogonal(batch: CorrespondenceBatch, group_order: int, *,
                           refinements: int = 2) -> FitResult:
    """Closed-form orthogonal C_n steerer from before/after description pairs.

    The first estimate is the orthogonal Procrustes solution on the one-step
    pairs. Each refinement re-expresses a k-step pair as the one-step pair
    (rho^(k-1) before, after) and solves Procrustes on all pairs again.
    """
    if not batch.pairs:
        raise UnderdeterminedError("empty correspondence batch")
    n = int(group_order)
    D = batch.dim
    pairs = []
    for p in batch.pairs:
        if p.k is None:
            raise ValueError("every pair needs a step count k")
        k = int(p.k) % n
        if k:
            pairs.append((p.before, p.after, k))
    total = sum(b.shape[1] for b, _, _ in pairs)
    if total < D:
        raise UnderdeterminedError(f"{total} correspondences for a {D}-dimensional steerer")
    M = sum((a @ b.T for b, a, k in pairs if k == 1), np.zeros((D, D)))
    rank = _rank(M)
    if rank < D:
        raise DegenerateFitError("one-step cross-covariance is rank deficient", rank)
    rho = polar_orthogonal(M)
    for _ in range(refinements if any(k > 1 for _, _, k in pairs) else 0):
        M = sum((a @ (np.linalg.matrix_power(rho, k - 1) @ b).T for b, a, k in pairs),
                np.zeros((D, D)))
        rank = _rank(M)
        if rank < D:
            raise DegenerateFitError("refined cross-covariance is rank deficient", rank)
        rho = polar_orthogonal(M)
    num = sum(np.sum((np.linalg.matrix_power(rho, k) @ b - a) ** 2) for b, a, k in pairs)
    den = sum(np.sum(a**2) for _, a, _ in pairs)
    return FitResult(
        steerer=Steerer(rho, n),
        residual=float(math.sqrt(num / den)) if den > 0 else 0.0,
        orthogonality_defect=float(np.linalg.norm(rho.T @ rho - np.eye(D))),
        rank=rank,
    )


def _unitary_polar(M: np.ndarray) -> np.ndarray:
    U, _, Vh = np.linalg.svd(M)
    return U @ Vh


def fit_steerer_anchored(batch: CorrespondenceBatch, group_order: int, anchor: int) -> FitResult:
    """C_n steerer whose ``anchor``-th power is fitted first and then held fixed.

    ``anchor`` must divide ``group_order``. The anchor map R is the orthogonal
    Procrustes fit on the pairs with k = anchor, with its eigenphases snapped
    to multiples of 2*pi*anchor/n. Every rho with rho^anchor = R commutes with
    R, so rho is fitted separately on each eigenspace of R from the pairs with
    k = 1 (mod anchor), re-expressed through powers of R. The fitted
    eigenphases are then snapped to the nearest anchor-th roots of the
    eigenspace's phase. The result is an exact C_n representation with
    rho^anchor = R, and the one-step data decides which root each direction
    takes.
    """
    n = int(group_order)
    anchor = int(anchor)
    if anchor < 1 or n % anchor:
        raise ValueError(f"anchor {anchor} must be a positive divisor of {n}")
    if not batch.pairs:
        raise UnderdeterminedError("empty correspondence batch")
    D = batch.dim
    pairs = []
    for p in batch.pairs:
        if p.k is None:
            raise ValueError("every pair needs a step count k")
        if int(p.k) % n:
            pairs.append((p.before, p.after, int(p.k) % n))
    anchor_pairs = [(b, a) for b, a, k in pairs if k == anchor % n]
    if anchor % n == 0:
        R = np.eye(D)
    else:
        if sum(b.shape[1] for b, _ in anchor_pairs) < D:
            raise UnderdeterminedError(f"fewer than {D} correspondences at k = {anchor}")
        M = sum((a @ b.T for b, a in anchor_pairs), np.zeros((D, D)))
        rank = _rank(M)
        if rank < D:
            raise DegenerateFitError("anchor cross-covariance is rank deficient", rank)
        R = polar_orthogonal(M)
    sub_order = n // anchor
    T, V = schur(R.astype(complex), output="complex")
    lattice = np.round(np.angle(np.diag(T)) * sub_order / (2 * np.pi)).astype(int) % sub_order
    one_step = [(b, a, k // anchor) for b, a, k in pairs if k % anchor == 1 % anchor]
    if sum(b.shape[1] for b, _, _ in one_step) < D:
        raise UnderdeterminedError(f"fewer than {D} one-step correspondences")
    rho = np.zeros((D, D), dtype=complex)
    rank = D
    for j in np.unique(lattice):
        W = V[:, lattice == j]
        psi = 2 * np.pi * j / sub_order
        # on this eigenspace R acts as exp(i psi), so rho^(m*anchor + 1) = exp(i m psi) rho
        M = sum((np.exp(-1j * m * psi) * (W.conj().T @ a) @ (W.conj().T @ b).conj().T
                 for b, a, m in one_step), np.zeros((W.shape[1], W.shape[1]), dtype=complex))
        rank = min(rank, _rank(M) + D - W.shape[1])
        U = _unitary_polar(M)
        Tu, Wu = schur(U, output="complex")
        phase = np.angle(np.diag(Tu))
        step = 2 * np.pi / anchor
        snapped = psi / anchor + step * np.round((phase - psi / anchor) / step)
        rho += W @ Wu @ np.diag(np.exp(1j * snapped)) @ Wu.conj().T @ W.conj().T
    rho = polar_orthogonal(rho.real)
    num = sum(np.sum((np.linalg.matrix_power(rho, k) @ b - a) ** 2) for b, a, k in pairs)
    den = sum(np.sum(a**2) for _, a, _ in pairs)
    return FitResult(
        steerer=Steerer(rho, n),
        residual=float(math.sqrt(num / den)) if den > 0 else 0.0,
        orthogonality_defect=float(np.linalg.norm(rho.T @ rho - np.eye(D))),
        rank=rank,
    )


@dataclass(frozen=True)
class GeneratorFit:
    generator: LieGenerator
    angles: tuple[float, ...]
    per_angle_residual: tuple[float, ...]
    residual: float


def fit_generator(batch: CorrespondenceBatch) -> GeneratorFit:
    """Least-squares Lie generator from orthogonal fits at several angles.

    Angles are processed by increasing magnitude. The first logarithm is the
    principal one; later ones are taken relative to the running estimate,
    log(rho_i) = a_i G + log(expm(-a_i G) rho_i), which keeps frequencies above
    pi / a_i on the right branch.
    """
    by_angle: dict[float, list[CorrespondencePair]] = {}
    for p in batch.pairs:
        if p.angle is None:
            raise ValueError("every pair needs an angle")
        a = float(p.angle)
        if abs(a) >= math.pi:
            raise BranchAmbiguityError(f"angle {a:.6g} rad is outside (-pi, pi)")
        if a != 0.0:
            by_angle.setdefault(a, []).append(p)
    if len(by_angle) < 2:
        raise ValueError("need at least two distinct nonzero angles")
    angles = sorted(by_angle, key=lambda a: (abs(a), a))
    fits = {}
    for a in angles:
        # a two-element group keeps k = 1 as a genuine one-step constraint
        sub = CorrespondenceBatch([CorrespondencePair(p.before, p.after, k=1) for p in by_angle[a]])
        fits[a] = fit_steerer_orthogonal(sub, 2, refinements=0)
    num = np.zeros((batch.dim, batch.dim))
    den = 0.0
    est = None
    for a in angles:
        rho = fits[a].steerer.matrix
        try:
            if est is None:
                log = logm_real(rho)
            else:
                log = a * est + logm_real(expm(-a * est) @ rho)
        except ValueError as exc:
            raise ValueError(f"logarithm failed at angle {a:.6g} rad: {exc}") from None
        num += a * log
        den += a * a
        est = num / den
    return GeneratorFit(
        generator=LieGenerator(est),
        angles=tuple(angles),
        per_angle_residual=tuple(fits[a].residual for a in angles),
        residual=float(max(np.linalg.norm(expm(a * est) - fits[a].steerer.matrix) for a in angles)),
    )


@dataclass(frozen=True)
class GramRecovery:
    matrix: np.ndarray
    rank: int
    gram_deviation: float
    sample_residual: float


def recover_orthogonal_from_gram(before, after, *, tau_gram: float = TAU_GRAM) -> GramRecovery:
    """Orthogonal map sending each ``before`` column to the matching ``after`` column.

    Requires the two Gram matrices to agree within ``tau_gram``. On the
    orthogonal complement of the sample span the map is the identity when the
    two spans coincide, and otherwise the rotation between complements closest
    to the identity.
    """
    W = np.asarray(before, dtype=np.float64)
    Wp = np.asarray(after, dtype=np.float64)
    if W.ndim != 2 or W.shape != Wp.shape:
        raise ValueError("before/after must be equal-shape D x m matrices")
    D, m = W.shape
    dev = np.abs(W.T @ W - Wp.T @ Wp)
    worst = np.unravel_index(int(np.argmax(dev)), dev.shape) if m else (0, 0)
    deviation = float(dev[worst]) if m else 0.0
    if deviation > tau_gram:
        raise HypothesisViolatedError((int(worst[0]), int(worst[1])), deviation)
    U, s, Vt = np.linalg.svd(W)
    r = int(np.sum(s > 1e-10 * max(s[0], 1e-300))) if len(s) else 0
    Ur, Uperp = U[:, :r], U[:, r:]
    Ur_img = Wp @ Vt[:r].T / s[:r]
    Q = Ur_img @ Ur.T
    if r < D:
        Uc = np.linalg.svd(Ur_img)[0] if r else np.eye(D)
        Cp = Uc[:, r:]
        Q = Q + Cp @ polar_orthogonal(Cp.T @ Uperp) @ Uperp.T
    Q = polar_orthogonal(Q)
    resid = float(np.max(np.linalg.norm(Q @ W - Wp, axis=0))) if m else 0.0
    return GramRecovery(matrix=Q, rank=r, gram_deviation=deviation, sample_residual=resid)


def eval_match_likelihood(y1, y2, steerer_matrix, k: int, true_pairs, *,
                          iota: float = 20.0) -> float:
    """Mean negative log dual-softmax probability of the true pairs after steering y2."""
    pairs = np.asarray(true_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("no true pairs given")
    y1 = np.asarray(y1, dtype=np.float64)
    z = np.linalg.matrix_power(np.asarray(steerer_matrix, dtype=np.float64), int(k)) @ np.asarray(y2, float)
    z = z / np.linalg.norm(z, axis=0)
    P = dual_softmax(y1.T @ z, MatcherConfig(inverse_temperature=iota))
    return float(-np.mean(np.log(P[pairs[:, 0], pairs[:, 1]])))


def prune_by_eigenvalue(op, y, keep_fraction: float, *, generator: bool | None = None,
                        group_order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Project descriptions onto the eigenvectors with the largest eigenvalues.

    Eigenvalues are ranked by modulus (for a generator, by exp(Re lambda), the
    modulus of the steerer at unit angle), then by lower frequency, then by
    index. Conjugate pairs are kept together. Returns the renormalized
    projected descriptions and the orthonormal ``(D', D)`` projection basis.
    """
    if isinstance(op, LieGenerator):
        generator, order, A = True, None, op.matrix
    elif isinstance(op, Steerer):
        generator, order, A = False, op.group_order, op.matrix
    else:
        A = np.asarray(op, dtype=np.float64)
        generator = bool(generator)
        order = None if generator else group_order
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    D = A.shape[0]
    target = math.floor(keep_fraction * D + 1e-9)
    if target == 0:
        raise ValueError(f"keep_fraction {keep_fraction} keeps no dimension of {D}")
    lam, vec = np.linalg.eig(A)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(lam))))
    cands = []
    for i in np.flatnonzero(lam.imag >= -tol):
        l = lam[i]
        mag = math.exp(l.real) if generator else abs(l)
        if generator:
            freq = abs(l.imag)
        else:
            freq = abs(math.atan2(l.imag, l.real)) * order / (2 * math.pi)
        complex_pair = l.imag > tol
        cands.append((-round(mag, 12), round(freq), int(i), complex_pair))
    cands.sort()
    cols = []
    for _, _, i, complex_pair in cands:
        if len(cols) >= target:
            break
        v = vec[:, i]
        cols += [v.real, v.imag] if complex_pair else [v.real if np.any(v.real) else v.imag]
    Qb, _ = np.linalg.qr(np.column_stack(cols))
    basis = Qb.T
    z = basis @ np.asarray(y, dtype=np.float64)
    norm = np.linalg.norm(z, axis=0)
    return z / np.where(norm > 0, norm, 1.0), basis
