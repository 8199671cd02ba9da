"""
Pinhole camera model: intrinsics, the image of the absolute conic and
range-based distances between back-projected points.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple, Union

import numpy as np

from errors import RejectedHypothesisError, SingularIntrinsicsError


@dataclass(frozen=True)
class Intrinsics:
    """Camera matrix K = [[fx, skew, cx], [0, fy, cy], [0, 0, 1]] (pixels)."""

    fx: float
    fy: float
    skew: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    # Image size (pixels)
    width: float = 640.0
    height: float = 480.0

    def __post_init__(self):
        values = (self.fx, self.fy, self.skew, self.cx, self.cy, self.width, self.height)
        if not all(np.isfinite(v) for v in values):
            raise SingularIntrinsicsError(f"intrinsics must be finite, got {values}")
        if self.fx <= 0 or self.fy <= 0:
            raise SingularIntrinsicsError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def default_guess(cls, width: float, height: float) -> "Intrinsics":
        """Focal length at half of the mean image size, principal point at the image center."""
        focal = (width + height) / 4.0
        return cls(fx=focal, fy=focal, skew=0.0, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)

    @classmethod
    def from_matrix(cls, K: np.ndarray, width: float = 640.0, height: float = 480.0) -> "Intrinsics":
        K = np.asarray(K, dtype=float)
        if K.shape != (3, 3):
            raise SingularIntrinsicsError(f"expected a 3x3 matrix, got shape {K.shape}")
        if K[2, 2] == 0:
            raise SingularIntrinsicsError("K[2, 2] is zero")
        K = K / K[2, 2]
        return cls(fx=float(K[0, 0]), fy=float(K[1, 1]), skew=float(K[0, 1]),
                   cx=float(K[0, 2]), cy=float(K[1, 2]), width=width, height=height)

    @property
    def focal(self) -> float:
        """Mean focal length."""
        return 0.5 * (self.fx + self.fy)

    @property
    def image_size(self) -> Tuple[float, float]:
        return (self.width, self.height)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, self.skew, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def inverse(self) -> np.ndarray:
        # Closed form of the upper-triangular inverse
        fx, fy, s, cx, cy = self.fx, self.fy, self.skew, self.cx, self.cy
        return np.array([
            [1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
            [0.0, 1.0 / fy, -cy / fy],
            [0.0, 0.0, 1.0],
        ])

    def with_focal(self, focal: float) -> "Intrinsics":
        """Same camera with fx = fy = focal."""
        return replace(self, fx=float(focal), fy=float(focal))

    def normalizer(self) -> np.ndarray:
        """
        Map pixels to coordinates centered on the image with unit half-diagonal.

        Returns:
            3x3 matrix N such that N @ u is the normalized homogeneous pixel
        """
        h = 0.5 * self.diagonal
        return np.array([
            [1.0 / h, 0.0, -0.5 * self.width / h],
            [0.0, 1.0 / h, -0.5 * self.height / h],
            [0.0, 0.0, 1.0],
        ])

    def normalized_matrix(self) -> np.ndarray:
        """N @ K; entries (0,2) and (1,2) are principal point offsets from the center."""
        return self.normalizer() @ self.matrix

    @classmethod
    def from_normalized(cls, params: np.ndarray, width: float, height: float) -> "Intrinsics":
        """Inverse of `normalized_params`."""
        h = 0.5 * float(np.hypot(width, height))
        fx, fy, s, ox, oy = (float(p) for p in params)
        return cls(fx=fx * h, fy=fy * h, skew=s * h, cx=ox * h + 0.5 * width,
                   cy=oy * h + 0.5 * height, width=width, height=height)

    def normalized_params(self) -> np.ndarray:
        """(fx, fy, skew, cx offset, cy offset) of the normalized matrix."""
        Kn = self.normalized_matrix()
        return np.array([Kn[0, 0], Kn[1, 1], Kn[0, 1], Kn[0, 2], Kn[1, 2]])

    def rays(self, pixels: np.ndarray) -> np.ndarray:
        """
        Back-project pixels to sightlines K^-1 u (third coordinate is 1).

        Args:
            pixels: (..., 2) pixel coordinates

        Returns:
            (..., 3) sightline vectors
        """
        pixels = np.asarray(pixels, dtype=float)
        y = (pixels[..., 1] - self.cy) / self.fy
        x = (pixels[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (..., 3) camera-frame points to (..., 2) pixels."""
        points = np.asarray(points, dtype=float)
        uvw = points @ self.matrix.T
        return uvw[..., :2] / uvw[..., 2:3]

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy), "skew": float(self.skew),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": float(self.width), "height": float(self.height),
        }

    def __repr__(self):
        return (f"Intrinsics(f=({self.fx:.2f},{self.fy:.2f}), s={self.skew:.3f}, "
                f"pp=({self.cx:.2f},{self.cy:.2f}), {self.width:g}x{self.height:g})")


@dataclass(frozen=True, eq=False)
class IAC:
    """Image of the absolute conic, scaled so that omega[2, 2] == 1."""

    omega: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.shape != (3, 3):
            raise RejectedHypothesisError(f"IAC must be 3x3, got shape {omega.shape}")
        omega = 0.5 * (omega + omega.T)
        if omega[2, 2] <= 0 or not np.all(np.isfinite(omega)):
            raise RejectedHypothesisError(f"IAC entry (3,3) must be positive, got {omega[2, 2]}")
        object.__setattr__(self, "omega", omega / omega[2, 2])

    @classmethod
    def from_params(cls, params: np.ndarray) -> "IAC":
        """Build from the five free entries (w11, w12, w13, w22, w23)."""
        w11, w12, w13, w22, w23 = params
        return cls(np.array([[w11, w12, w13], [w12, w22, w23], [w13, w23, 1.0]]))

    @classmethod
    def from_intrinsics(cls, intrinsics: Intrinsics) -> "IAC":
        Kinv = intrinsics.inverse
        return cls(Kinv.T @ Kinv)

    @property
    def params(self) -> np.ndarray:
        w = self.omega
        return np.array([w[0, 0], w[0, 1], w[0, 2], w[1, 1], w[1, 2]])

    @property
    def leading_minors(self) -> np.ndarray:
        w = self.omega
        return np.array([w[0, 0], np.linalg.det(w[:2, :2]), np.linalg.det(w)])

    @property
    def is_valid(self) -> bool:
        """True when positive definite (all leading principal minors positive)."""
        return bool(np.all(self.leading_minors > 0))

    def distance(self, other: "IAC") -> float:
        """Relative distance between two IACs."""
        return float(np.linalg.norm(self.omega - other.omega) / np.linalg.norm(other.omega))


def intrinsics_from_iac(iac: IAC, width: float = 640.0, height: float = 480.0) -> Intrinsics:
    """
    Recover K from a positive definite IAC by Cholesky decomposition.

    Omega = L L^T with L lower triangular equals K^-T K^-1 up to scale, so
    K^-1 is proportional to L^T.

    Raises:
        RejectedHypothesisError: if the IAC is not positive definite
    """
    if not iac.is_valid:
        raise RejectedHypothesisError(
            f"IAC is not positive definite (leading minors {iac.leading_minors})")
    L = np.linalg.cholesky(iac.omega)
    K = np.linalg.inv(L.T)
    return Intrinsics.from_matrix(K, width=width, height=height)


def _inverse_matrix(K: Union[Intrinsics, np.ndarray]) -> np.ndarray:
    if isinstance(K, Intrinsics):
        return K.inverse
    K = np.asarray(K, dtype=float)
    if K.shape != (3, 3) or abs(np.linalg.det(K)) < 1e-300:
        raise SingularIntrinsicsError("camera matrix is singular")
    return np.linalg.inv(K)


def unit_rays(K: Union[Intrinsics, np.ndarray], u: np.ndarray) -> np.ndarray:
    """Unit sightlines K^-1 u / ||K^-1 u|| for (..., 3) homogeneous pixels."""
    r = np.asarray(u, dtype=float) @ _inverse_matrix(K).T
    return r / np.linalg.norm(r, axis=-1, keepdims=True)


def upgraded_distance(
    K: Union[Intrinsics, np.ndarray],
    a_i: Union[float, np.ndarray],
    a_j: Union[float, np.ndarray],
    u_i: np.ndarray,
    u_j: np.ndarray,
) -> Union[float, np.ndarray]:
    """
    Distance between two points placed at ranges a_i, a_j along the
    sightlines of u_i, u_j under intrinsics K.

    Args:
        K: Intrinsics (or a 3x3 matrix)
        a_i, a_j: Ranges (scalars or arrays)
        u_i, u_j: Homogeneous pixels, shape (3,) or (n, 3)

    Returns:
        ||a_i K^-1 u_i / ||K^-1 u_i|| - a_j K^-1 u_j / ||K^-1 u_j|| ||
    """
    n_i = unit_rays(K, u_i)
    n_j = unit_rays(K, u_j)
    a_i = np.asarray(a_i, dtype=float)[..., None]
    a_j = np.asarray(a_j, dtype=float)[..., None]
    d = np.linalg.norm(a_i * n_i - a_j * n_j, axis=-1)
    return float(d) if d.ndim == 0 else d
