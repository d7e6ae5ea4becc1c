"""Parity-graded operator algebra on small, dense Hilbert spaces.

Every Hilbert-space factor carries a diagonal parity operator ``theta``
(``+1`` on the even subspace, ``-1`` on the odd one).  Bosonic and other
non-fermionic factors use ``theta = I``.  Operators on a composite of such
factors are classified as even, odd or mixed according to how they behave
under conjugation by the composite ``theta``, and operators living on
different factors are combined with the graded (antisymmetric) tensor
product so that odd operators on distinct fermionic factors anticommute.

Basis conventions
-----------------
* fermion mode: (unoccupied, occupied), ``theta = diag(+1, -1)``
* two-level atom: (ground, excited), trivial parity
* three-level detector: (|1>, |2>, |3>), ``theta = diag(+1, +1, -1)``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidParityAssignment,
    MixedParityOnFermionicSpace,
)

#: Relative tolerance used to classify operators as even or odd.
PARITY_TOL = 1e-12

#: Largest composite dimension accepted when building operators.
MAX_DIM = 64

FERMIONIC = "fermionic"
TRIVIAL = "bosonic-or-trivial"


class Parity(str, Enum):
    EVEN = "even"
    ODD = "odd"
    MIXED = "mixed"


@dataclass(frozen=True)
class GradedSpace:
    """A single Hilbert-space factor with a diagonal parity signature."""

    dim: int
    parity_signs: tuple = None
    kind: str = TRIVIAL
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        signs = self.parity_signs
        if signs is None:
            signs = (1,) * self.dim
        signs = tuple(int(s) for s in signs)
        if len(signs) != self.dim:
            raise DimensionMismatch(
                f"parity_signs has length {len(signs)}, expected {self.dim}")
        if any(s not in (1, -1) for s in signs):
            raise ValueError("parity signs must be +1 or -1")
        if self.kind not in (FERMIONIC, TRIVIAL):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == TRIVIAL and any(s == -1 for s in signs):
            raise ValueError("a bosonic-or-trivial space must have theta = I")
        object.__setattr__(self, "parity_signs", signs)

    @classmethod
    def trivial(cls, dim, label=""):
        return cls(dim, (1,) * dim, TRIVIAL, label)

    @classmethod
    def fermionic(cls, parity_signs, label=""):
        return cls(len(parity_signs), tuple(parity_signs), FERMIONIC, label)

    @property
    def is_fermionic(self):
        return self.kind == FERMIONIC

    @property
    def theta(self):
        return np.diag(np.asarray(self.parity_signs, dtype=complex))


def _as_composite(space) -> tuple:
    if isinstance(space, GradedSpace):
        return (space,)
    return tuple(space)


def composite_dim(space) -> int:
    return int(np.prod([s.dim for s in _as_composite(space)]))


def composite_signs(space) -> np.ndarray:
    """Diagonal of the composite parity operator ``theta_1 (x) theta_2 (x) ...``."""
    signs = [np.asarray(s.parity_signs, dtype=float) for s in _as_composite(space)]
    return reduce(np.kron, signs, np.ones(1))


def composite_theta(space) -> np.ndarray:
    return np.diag(composite_signs(space).astype(complex))


def is_graded(space) -> bool:
    """True when some factor carries a nontrivial grading."""
    return any(s.is_fermionic for s in _as_composite(space))


def _sign_mask(space):
    s = composite_signs(space)
    return np.outer(s, s)


def classify_parity(matrix, space, tol=PARITY_TOL) -> Parity:
    m = np.asarray(matrix)
    mask = _sign_mask(space)
    scale = max(np.linalg.norm(m), np.finfo(float).tiny)
    # theta X theta = mask * X, so X - tau(X) only keeps the odd blocks.
    odd_part = np.linalg.norm(m[mask < 0])
    even_part = np.linalg.norm(m[mask > 0])
    if odd_part <= tol * scale:
        return Parity.EVEN
    if even_part <= tol * scale:
        return Parity.ODD
    return Parity.MIXED


class GradedOperator:
    """Dense complex matrix bound to a composite graded space.

    The parity is computed once at construction.  Instances are treated as
    immutable: the stored matrix is a read-only copy.
    """

    __slots__ = ("matrix", "space", "parity")
    # keep numpy scalars from broadcasting over __array__ in ``x * op``
    __array_ufunc__ = None

    def __init__(self, matrix, space):
        space = _as_composite(space)
        m = np.array(matrix, dtype=complex)
        d = composite_dim(space)
        if m.shape != (d, d):
            raise DimensionMismatch(
                f"matrix of shape {m.shape} does not act on a space of dim {d}")
        if d > MAX_DIM:
            raise DimensionMismatch(f"composite dimension {d} exceeds MAX_DIM={MAX_DIM}")
        m.setflags(write=False)
        self.matrix = m
        self.space = space
        self.parity = classify_parity(m, space)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def is_even(self):
        return self.parity is Parity.EVEN

    @property
    def is_odd(self):
        return self.parity is Parity.ODD

    def _check_space(self, other):
        if self.space != other.space:
            raise DimensionMismatch("operators act on different composite spaces")

    def _wrap(self, m):
        return GradedOperator(m, self.space)

    def dag(self):
        return self._wrap(self.matrix.conj().T)

    def __add__(self, other):
        if isinstance(other, GradedOperator):
            self._check_space(other)
            return self._wrap(self.matrix + other.matrix)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, GradedOperator):
            self._check_space(other)
            return self._wrap(self.matrix - other.matrix)
        return NotImplemented

    def __neg__(self):
        return self._wrap(-self.matrix)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return self._wrap(scalar * self.matrix)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, GradedOperator):
            self._check_space(other)
            return self._wrap(self.matrix @ other.matrix)
        return NotImplemented

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def allclose(self, other, atol=1e-12):
        other_m = other.matrix if isinstance(other, GradedOperator) else np.asarray(other)
        return self.matrix.shape == other_m.shape and np.allclose(
            self.matrix, other_m, rtol=0.0, atol=atol)

    def __repr__(self):
        dims = "x".join(str(s.dim) for s in self.space)
        return f"GradedOperator(dims={dims}, parity={self.parity.value})"


def identity(space) -> GradedOperator:
    return GradedOperator(np.eye(composite_dim(space)), space)


def zero(space) -> GradedOperator:
    d = composite_dim(space)
    return GradedOperator(np.zeros((d, d)), space)


def tau(X: GradedOperator) -> GradedOperator:
    """Parity superoperator ``theta X theta``."""
    return GradedOperator(_sign_mask(X.space) * X.matrix, X.space)


def parity_decompose(X: GradedOperator):
    """Split ``X`` into its even and odd parts.

    Both parts are obtained by masking matrix entries, so ``even + odd``
    reproduces ``X`` exactly.
    """
    mask = _sign_mask(X.space)
    even = np.where(mask > 0, X.matrix, 0)
    odd = np.where(mask < 0, X.matrix, 0)
    return GradedOperator(even, X.space), GradedOperator(odd, X.space)


def graded_tensor(X1: GradedOperator, X2: GradedOperator) -> GradedOperator:
    r"""Antisymmetric tensor product ``X1 (x) X2_even + X1 theta_1 (x) X2_odd``.

    Reduces to the ordinary Kronecker product whenever either side carries
    trivial grading.

    Raises
    ------
    MixedParityOnFermionicSpace
        If either operator has mixed parity and both sides are graded.
    """
    if is_graded(X1.space) and is_graded(X2.space):
        if X1.parity is Parity.MIXED or X2.parity is Parity.MIXED:
            raise MixedParityOnFermionicSpace(
                "decompose mixed-parity operators before crossing a fermionic boundary")
    x2_even, x2_odd = parity_decompose(X2)
    theta1 = composite_theta(X1.space)
    m = np.kron(X1.matrix, x2_even.matrix) + np.kron(X1.matrix @ theta1, x2_odd.matrix)
    return GradedOperator(m, X1.space + X2.space)


def ampliate(X: GradedOperator, target_index: int, composite: Sequence[GradedSpace]) -> GradedOperator:
    """Lift an operator on one factor to the whole composite."""
    composite = tuple(composite)
    if not 0 <= target_index < len(composite):
        raise IndexOutOfRange(
            f"target_index {target_index} outside composite of {len(composite)} factors")
    if X.space != (composite[target_index],):
        raise DimensionMismatch("operator does not live on the target factor")
    if composite_dim(composite) > MAX_DIM:
        raise DimensionMismatch(f"composite dimension exceeds MAX_DIM={MAX_DIM}")
    out = None
    for k, factor in enumerate(composite):
        piece = X if k == target_index else identity(factor)
        out = piece if out is None else graded_tensor(out, piece)
    return out


def _binary(A, B, sign):
    if isinstance(A, GradedOperator) and isinstance(B, GradedOperator):
        A._check_space(B)
        return GradedOperator(A.matrix @ B.matrix + sign * (B.matrix @ A.matrix), A.space)
    a, b = np.asarray(A), np.asarray(B)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a @ b + sign * (b @ a)


def commutator(A, B):
    """``AB - BA``; accepts GradedOperators or plain arrays."""
    return _binary(A, B, -1)


def anticommutator(A, B):
    """``AB + BA``; accepts GradedOperators or plain arrays."""
    return _binary(A, B, +1)


# ---------------------------------------------------------------------------
# standard operator builders

class FermionMode(NamedTuple):
    c: GradedOperator
    c_dag: GradedOperator
    n: GradedOperator


class TwoLevel(NamedTuple):
    sigma_minus: GradedOperator
    sigma_plus: GradedOperator
    sigma_x: GradedOperator
    sigma_y: GradedOperator
    sigma_z: GradedOperator
    n: GradedOperator


def fermion_space(label="dot") -> GradedSpace:
    return GradedSpace.fermionic((1, -1), label)


def build_fermion_mode(space: GradedSpace = None) -> FermionMode:
    space = space or fermion_space()
    c = GradedOperator([[0, 1], [0, 0]], space)
    c_dag = c.dag()
    return FermionMode(c, c_dag, c_dag @ c)


def build_two_level(space: GradedSpace = None) -> TwoLevel:
    """Atomic operators in the (ground, excited) basis.

    ``sigma_z`` has eigenvalue +1 on the excited state so that the Pauli
    relations ``[sx, sy] = 2i sz`` and ``sigma_pm = (sx +- i sy)/2`` hold.
    """
    space = space or GradedSpace.trivial(2, "atom")
    sm = GradedOperator([[0, 1], [0, 0]], space)
    sp = sm.dag()
    sx = sp + sm
    sy = GradedOperator(-1j * (sp.matrix - sm.matrix), space)
    sz = GradedOperator(np.diag([-1.0, 1.0]), space)
    return TwoLevel(sm, sp, sx, sy, sz, sp @ sm)


#: Parities of the detector transition operators: only sigma_32 and sigma_13
#: (and hence their adjoints) are odd.
DETECTOR_PARITIES = {(3, 2): 1, (1, 3): 1, (1, 2): 0, (1, 1): 0, (2, 2): 0, (3, 3): 0}


def _solve_signs(assignment, dim):
    # Each constraint says s_j * s_k = (-1)**delta; propagate from s_1 = +1.
    adj = {j: [] for j in range(1, dim + 1)}
    for (j, k), delta in assignment.items():
        if not (1 <= j <= dim and 1 <= k <= dim):
            raise InvalidParityAssignment(f"level index out of range in {(j, k)}")
        if delta not in (0, 1):
            raise InvalidParityAssignment(f"parity of sigma_{j}{k} must be 0 or 1")
        adj[j].append((k, delta))
        adj[k].append((j, delta))
    signs = {}
    for start in range(1, dim + 1):
        if start in signs:
            continue
        signs[start] = 1
        stack = [start]
        while stack:
            j = stack.pop()
            for k, delta in adj[j]:
                want = signs[j] * (-1) ** delta
                if k not in signs:
                    signs[k] = want
                    stack.append(k)
                elif signs[k] != want:
                    raise InvalidParityAssignment(
                        "parity assignment violates delta(XY) = delta(X) + delta(Y) mod 2")
    return tuple(signs[j] for j in range(1, dim + 1))


def build_three_level(parity_assignment=None, space: GradedSpace = None) -> dict:
    """Transition operators ``sigma_jk = |j><k|`` for a three-level system.

    ``parity_assignment`` maps ``(j, k)`` to 0 (even) or 1 (odd); it defaults
    to the detector grading in which ``sigma_32`` and ``sigma_13`` are odd.
    The returned dict is keyed by ``(j, k)`` with 1-based levels.
    """
    if space is None:
        assignment = DETECTOR_PARITIES if parity_assignment is None else dict(parity_assignment)
        signs = _solve_signs(assignment, 3)
        kind = FERMIONIC if -1 in signs else TRIVIAL
        space = GradedSpace(3, signs, kind, "detector")
    ops = {}
    for j in range(1, 4):
        for k in range(1, 4):
            m = np.zeros((3, 3), dtype=complex)
            m[j - 1, k - 1] = 1.0
            ops[(j, k)] = GradedOperator(m, space)
    return ops
