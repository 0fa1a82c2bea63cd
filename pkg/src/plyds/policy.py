"""The learned dynamical-system policy: one Gram-form polynomial per state
dimension, evaluated relative to a common target point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .poly import (
    BasisSpec,
    ELEMENTWISE,
    GramPolynomial,
    MonomialPoly,
    basis_matrix,
    expand_gram,
)


@dataclass(frozen=True)
class PolicyModel:
    """A polynomial vector field x_dot = f(x) with f(target) = 0.

    Component i is b(x - target)^T B_i b(x - target) over the degree-alpha
    basis that includes the constant entry; the equilibrium is enforced by a
    zero top-left entry in every block.
    """

    n: int
    alpha: int
    blocks: tuple[GramPolynomial, ...]
    target: np.ndarray = None
    basis_mode: str = ELEMENTWISE

    def __post_init__(self):
        target = self.target
        if target is None:
            target = np.zeros(self.n)
        target = np.asarray(target, dtype=float).reshape(-1)
        if target.shape[0] != self.n:
            raise InputError(f"target has dimension {target.shape[0]}, expected {self.n}")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.blocks) != self.n:
            raise InputError(f"expected {self.n} coefficient blocks, got {len(self.blocks)}")
        spec = self.basis_spec
        blocks = []
        for i, block in enumerate(self.blocks):
            if block.spec != spec:
                raise InputError(f"block {i} uses basis {block.spec}, expected {spec}")
            # Zero velocity at the target means the constant-squared entry of
            # every block vanishes; pin it exactly, rejecting clear violations.
            entry = block.matrix[0, 0]
            if abs(entry) > 1e-9:
                raise InputError(
                    f"block {i} has equilibrium entry {entry:.3e}; the field must "
                    "vanish at the target")
            if entry != 0.0:
                mat = block.matrix.copy()
                mat[0, 0] = 0.0
                block = GramPolynomial(spec, mat)
            blocks.append(block)
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def basis_spec(self) -> BasisSpec:
        return BasisSpec(self.n, self.alpha, include_constant=True, mode=self.basis_mode)

    @classmethod
    def from_matrices(cls, n, alpha, matrices, target=None, basis_mode=ELEMENTWISE):
        spec = BasisSpec(n, alpha, include_constant=True, mode=basis_mode)
        blocks = tuple(GramPolynomial(spec, np.asarray(m, dtype=float)) for m in matrices)
        return cls(n=n, alpha=alpha, blocks=blocks, target=target, basis_mode=basis_mode)

    def predict(self, x) -> np.ndarray:
        """Velocity at a single state point."""
        return self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def predict_many(self, X) -> np.ndarray:
        """Velocities at m state points; returns an (m, n) array."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise InputError(f"expected points of shape (m, {self.n}), got {X.shape}")
        B = basis_matrix(X - self.target, self.basis_spec)
        out = np.empty((X.shape[0], self.n))
        for i, block in enumerate(self.blocks):
            out[:, i] = np.einsum("mi,ij,mj->m", B, block.matrix, B)
        return out

    def component_polys(self) -> list[MonomialPoly]:
        """Each component as an exact monomial polynomial in (x - target)."""
        return [expand_gram(block) for block in self.blocks]
