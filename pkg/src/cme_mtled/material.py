"""Compressible neo-Hookean material in the total-Lagrangian setting.

    W = mu/2 (I1 - 3) - mu ln J + lam/2 (ln J)^2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaterialError(ValueError):
    pass


class InversionError(ArithmeticError):
    """Non-positive Jacobian of the deformation gradient."""

    def __init__(self, message, point=None, jacobian=None):
        super().__init__(message)
        self.point = point
        self.jacobian = jacobian


def lame_from_engineering(E: float, nu: float) -> tuple[float, float]:
    """Lamé parameters ``(lam, mu)`` from Young's modulus and Poisson's ratio."""
    if not E > 0:
        raise MaterialError("Young's modulus must be positive")
    if nu >= 0.5:
        raise MaterialError("Poisson's ratio 0.5 is incompressible; the compressible law needs nu < 0.5")
    if nu <= -1.0:
        raise MaterialError("Poisson's ratio must exceed -1")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return lam, mu


@dataclass(frozen=True)
class NeoHookean:
    lam: float
    mu: float
    density: float = 1000.0

    def __post_init__(self):
        if not self.mu > 0:
            raise MaterialError("shear modulus must be positive")
        if self.lam < 0:
            raise MaterialError("first Lamé parameter must be non-negative")
        if not self.density > 0:
            raise MaterialError("density must be positive")

    @classmethod
    def from_engineering(cls, E: float, nu: float, density: float = 1000.0) -> "NeoHookean":
        lam, mu = lame_from_engineering(E, nu)
        return cls(lam, mu, density)

    @property
    def youngs_modulus(self) -> float:
        return self.mu * (3 * self.lam + 2 * self.mu) / (self.lam + self.mu)

    @property
    def poisson_ratio(self) -> float:
        return self.lam / (2 * (self.lam + self.mu))

    def _jacobian(self, F):
        J = np.linalg.det(F)
        if np.any(~(J > 0)):
            raise InversionError(f"non-positive Jacobian det F = {np.min(J):.3e}", jacobian=np.min(J))
        return J

    def strain_energy(self, F) -> np.ndarray:
        """Energy density for one (3, 3) or many (n, 3, 3) deformation gradients."""
        F = np.asarray(F, dtype=float)
        J = self._jacobian(F)
        I1 = np.einsum("...ij,...ij->...", F, F)
        lnJ = np.log(J)
        return 0.5 * self.mu * (I1 - 3.0) - self.mu * lnJ + 0.5 * self.lam * lnJ**2

    def pk2_stress(self, F) -> np.ndarray:
        """Second Piola-Kirchhoff stress ``S = mu (I - C^-1) + lam ln J C^-1``."""
        F = np.asarray(F, dtype=float)
        J = self._jacobian(F)
        C = np.swapaxes(F, -1, -2) @ F
        Cinv = np.linalg.inv(C)
        lnJ = np.log(J)[..., None, None]
        return self.mu * (np.eye(3) - Cinv) + self.lam * lnJ * Cinv

    def pk1_stress(self, F) -> np.ndarray:
        return np.asarray(F, dtype=float) @ self.pk2_stress(F)
