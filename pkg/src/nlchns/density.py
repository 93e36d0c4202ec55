"""Affine mixture density with a C^{2,1} extension off [-1, 1].

Inside [-1, 1] the density is ``rho0 + beta s``.  On ``[1, 1 + w]`` the
derivative ramps from ``beta`` to 0 along the cubic smoothstep
``S(t) = 1 - 3t^2 + 2t^3``; the mirror image is used below -1 and the
density is constant beyond ``1 + w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# max |S'(t)| on [0, 1], attained at t = 1/2
SMOOTHSTEP_SLOPE_MAX = 1.5
# Lipschitz constant of S' on [0, 1]
SMOOTHSTEP_CURVATURE_MAX = 6.0


class DensityConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DensityModel:
    rho1: float
    rho2: float
    width: float = 0.25
    beta: float = field(init=False)
    rho0: float = field(init=False)

    def __post_init__(self):
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise DensityConfigError("pure-phase densities must be positive")
        if not self.width > 0:
            raise DensityConfigError("ramp width must be positive")
        beta = 0.5 * (self.rho2 - self.rho1)
        if beta != 0:
            wmax = 2.0 * min(self.rho1, self.rho2) / abs(beta)
            if self.width >= wmax:
                raise DensityConfigError(
                    f"ramp width {self.width} violates w < 2 min(rho1, rho2)/|beta| = {wmax}; "
                    "the extended density would not stay positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rho0", 0.5 * (self.rho1 + self.rho2))

    @property
    def rho_lower(self) -> float:
        return min(self.rho1, self.rho2) - abs(self.beta) * self.width / 2

    @property
    def rho_upper(self) -> float:
        return max(self.rho1, self.rho2) + abs(self.beta) * self.width / 2

    @property
    def R1(self) -> float:
        return abs(self.beta)

    @property
    def R2(self) -> float:
        # twice the sharp value 1.5|beta|/w, kept as the documented bound
        return 2.0 * abs(self.beta) * SMOOTHSTEP_SLOPE_MAX / self.width

    @property
    def lipschitz_d2(self) -> float:
        return abs(self.beta) * SMOOTHSTEP_CURVATURE_MAX / self.width ** 2

    def evaluate(self, s):
        """Return ``(rho, rho', rho'')`` at ``s`` (any shape)."""
        s = np.asarray(s, dtype=float)
        beta, w = self.beta, self.width
        a = np.abs(s)
        if a.size and a.max() <= 1.0:
            return self.rho0 + beta * s, np.full_like(s, beta), np.zeros_like(s)
        sg = np.where(s < 0, -1.0, 1.0)
        t = np.clip((a - 1.0) / w, 0.0, 1.0)
        ramp = a > 1.0
        # antiderivative of S from 0 to t, scaled by w
        intS = w * (t - t ** 3 + 0.5 * t ** 4)
        S = 1.0 - 3.0 * t ** 2 + 2.0 * t ** 3
        dS = -6.0 * t + 6.0 * t ** 2
        rho = np.where(ramp, self.rho0 + beta * sg * (1.0 + intS), self.rho0 + beta * s)
        d1 = np.where(ramp, beta * S, beta)
        d2 = np.where(ramp, sg * beta * dS / w, 0.0)
        return rho, d1, d2

    def rho(self, s):
        return self.evaluate(s)[0]

    def to_dict(self) -> dict:
        return {"rho1": self.rho1, "rho2": self.rho2, "width": self.width}


def build(rho1: float, rho2: float, width: float = 0.25) -> DensityModel:
    return DensityModel(rho1, rho2, width)
