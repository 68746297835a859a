"""Rigid-body poses and relative-pose measurements.

Quaternions are stored (w, x, y, z) and composed with the Hamilton product.
All values are immutable after construction; operations return new instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to (w, x, y, z) quaternion, w >= 0."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        K = skew(v)
        return np.eye(3) + K + 0.5 * (K @ K)
    k = v / theta
    K = skew(k)
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Logarithm of a rotation matrix as an axis-angle vector."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        # First-order: vee of the skew part.
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # Near pi the sine formula is singular; at pi, (R + I)/2 = axis axis^T.
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        i = int(np.argmax(axis))
        if axis[i] > 1e-12:
            for j in range(3):
                if j != i and A[i, j] < 0:
                    axis[j] = -axis[j]
        n = np.linalg.norm(axis)
        if n > 1e-12:
            axis = axis / n
        return axis * theta
    return theta / (2.0 * np.sin(theta)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: maps child-frame coordinates into the parent frame.

    p_parent = R @ p_child + t.
    """

    quat: np.ndarray  # (w, x, y, z), unit norm
    trans: np.ndarray  # (x, y, z) meters

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        t = np.asarray(self.trans, dtype=float)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("quat must be length 4, trans length 3")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "quat", _frozen(q))
        object.__setattr__(self, "trans", _frozen(t))

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "Pose3":
        return Pose3(matrix_to_quat(np.asarray(R, dtype=float)), t)

    @staticmethod
    def from_rotvec(v: np.ndarray, t: np.ndarray) -> "Pose3":
        return Pose3.from_matrix(rotvec_to_matrix(np.asarray(v, dtype=float)), t)

    @staticmethod
    def from_yaw(yaw: float, t: np.ndarray) -> "Pose3":
        h = yaw / 2.0
        return Pose3(np.array([np.cos(h), 0.0, 0.0, np.sin(h)]), t)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def compose(self, other: "Pose3") -> "Pose3":
        """Rigid composition self ∘ other."""
        q = quat_multiply(self.quat, other.quat)
        q = q / np.linalg.norm(q)
        t = self.trans + quat_to_matrix(self.quat) @ other.trans
        return Pose3(q, t)

    def inverse(self) -> "Pose3":
        qc = quat_conjugate(self.quat)
        return Pose3(qc, -(quat_to_matrix(qc) @ self.trans))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) array of child-frame points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix.T + self.trans

    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation_matrix)

    def almost_equal(self, other: "Pose3", tol: float = 1e-9) -> bool:
        te, re = pose_error(self, other)
        return te <= tol and np.radians(re) <= tol

    def __repr__(self):
        q = ", ".join(f"{v:.6f}" for v in self.quat)
        t = ", ".join(f"{v:.3f}" for v in self.trans)
        return f"Pose3(quat=({q}), trans=({t}))"


def compose(a: Pose3, b: Pose3) -> Pose3:
    return a.compose(b)


def pose_error(a: Pose3, b: Pose3) -> tuple[float, float]:
    """Translation distance (m) and geodesic rotation angle (degrees) between poses."""
    trans_err = float(np.linalg.norm(a.trans - b.trans))
    # |dot| of unit quaternions gives cos(theta/2) of the relative rotation.
    d = min(1.0, abs(float(np.dot(a.quat, b.quat))))
    rot_err = float(np.degrees(2.0 * np.arccos(d)))
    return trans_err, rot_err


def pose_to_json(p: Pose3) -> dict:
    return {"q": [float(v) for v in p.quat], "t": [float(v) for v in p.trans]}


def pose_from_json(d: dict) -> Pose3:
    return Pose3(np.array(d["q"], dtype=float), np.array(d["t"], dtype=float))


@dataclass(frozen=True)
class BetweenMeasurement:
    """Relative-pose constraint: `relative` is the pose of to_key in from_key's frame."""

    from_key: tuple
    to_key: tuple
    relative: Pose3
    info: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        info = np.asarray(self.info, dtype=float)
        if info.shape != (6, 6):
            raise ValueError("information matrix must be 6x6")
        if not np.allclose(info, info.T, atol=1e-9):
            raise ValueError("information matrix must be symmetric")
        eigvals = np.linalg.eigvalsh(info)
        if np.min(eigvals) <= 0:
            raise ValueError("information matrix must be positive definite")
        object.__setattr__(self, "info", _frozen(info))
        object.__setattr__(self, "from_key", tuple(self.from_key))
        object.__setattr__(self, "to_key", tuple(self.to_key))


def diagonal_information(trans_sigma: float, rot_sigma_rad: float) -> np.ndarray:
    """6x6 information for independent translation (m) / rotation (rad) noise.

    Block order matches residuals: translation first, rotation second.
    """
    if trans_sigma <= 0 or rot_sigma_rad <= 0:
        raise ValueError("sigmas must be positive")
    d = np.concatenate([np.full(3, trans_sigma**-2), np.full(3, rot_sigma_rad**-2)])
    return np.diag(d)
