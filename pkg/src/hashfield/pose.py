"""Camera poses on SE(3), ray generation, pose noise and alignment metrics.

Cameras are parameterized by 6-vector twists (axis-angle rotation stacked
with a translation coordinate) realized through the closed-form exponential
map.  Ray generation also produces the analytic Jacobians of ray origin and
direction with respect to the twist, which the renderer chains into pose
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

SMALL_ANGLE = 1e-3  # below this the trig coefficient series are used


@dataclass
class Twist:
    """se(3) camera parameters: rotation part ``omega``, translation ``v``."""

    omega: np.ndarray
    v: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.omega, dtype=np.float64),
                               np.asarray(self.v, dtype=np.float64)])

    @classmethod
    def from_vector(cls, vec) -> "Twist":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(omega=vec[:3].copy(), v=vec[3:].copy())


@dataclass
class Pose:
    """Camera-to-world rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(R=m[:3, :3].copy(), t=m[:3, 3].copy())


@dataclass
class Intrinsics:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def _trig_coeffs(theta: float):
    """(sin t / t, (1-cos t)/t^2, (t - sin t)/t^3) with series fallbacks."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return a, b, c
    s, co = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - co) / theta ** 2, (theta - s) / theta ** 3


def _v_matrix(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    _, b, c = _trig_coeffs(theta)
    a_mat = skew(omega)
    return np.eye(3) + b * a_mat + c * (a_mat @ a_mat)


def exp_map(twist) -> Pose:
    """Closed-form exponential of a twist (Rodrigues rotation, V-matrix
    translation coupling), with a series expansion near zero rotation."""
    vec = twist.vector if isinstance(twist, Twist) else np.asarray(
        twist, dtype=np.float64)
    omega, v = vec[:3], vec[3:]
    theta = float(np.linalg.norm(omega))
    a, b, c = _trig_coeffs(theta)
    a_mat = skew(omega)
    a_sq = a_mat @ a_mat
    rot = np.eye(3) + a * a_mat + b * a_sq
    v_mat = np.eye(3) + b * a_mat + c * a_sq
    return Pose(R=rot, t=v_mat @ v)


def log_map(pose: Pose) -> Twist:
    """Inverse of ``exp_map`` for rotations below pi."""
    omega = Rotation.from_matrix(pose.R).as_rotvec()
    v = np.linalg.solve(_v_matrix(omega), pose.t)
    return Twist(omega=omega, v=v)


def rotation_point_jacobian(omega, point) -> np.ndarray:
    """d(R(omega) @ point)/d omega, a (3, 3) matrix.

    Uses the right-Jacobian identity: a perturbation delta of omega moves
    the rotated point by -R [point]x V(omega)^T delta.
    """
    omega = np.asarray(omega, dtype=np.float64)
    rot = exp_map(np.concatenate([omega, np.zeros(3)])).R
    return -rot @ skew(point) @ _v_matrix(omega).T


def translation_jacobian(omega, v) -> np.ndarray:
    """d(V(omega) @ v)/d omega, a (3, 3) matrix."""
    omega = np.asarray(omega, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    _, b, c = _trig_coeffs(theta)
    # derivatives of the coefficients divided by theta, series-guarded
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        db_over_t = -1.0 / 12.0 + t2 / 180.0
        dc_over_t = -1.0 / 60.0 + t2 / 1260.0
    else:
        s, co = np.sin(theta), np.cos(theta)
        db_over_t = (theta * s - 2.0 * (1.0 - co)) / theta ** 4
        dc_over_t = (theta * (1.0 - co) - 3.0 * (theta - s)) / theta ** 5
    wxv = np.cross(omega, v)
    wxwxv = np.cross(omega, wxv)
    jac = (np.outer(wxv, db_over_t * omega)
           + np.outer(wxwxv, dc_over_t * omega)
           - b * skew(v)
           - c * (skew(wxv) + skew(omega) @ skew(v)))
    return jac


def origin_jacobian(twist) -> np.ndarray:
    """d(camera center)/d twist for t = V(omega) v, a (3, 6) matrix."""
    vec = twist.vector if isinstance(twist, Twist) else np.asarray(
        twist, dtype=np.float64)
    omega, v = vec[:3], vec[3:]
    out = np.empty((3, 6))
    out[:, :3] = translation_jacobian(omega, v)
    out[:, 3:] = _v_matrix(omega)
    return out


def pixel_direction(pixel, intrinsics: Intrinsics) -> np.ndarray:
    """Camera-frame direction of a pixel on the z = -1 plane."""
    u, v = pixel
    return np.array([(u - intrinsics.cx) / intrinsics.focal,
                     (v - intrinsics.cy) / intrinsics.focal,
                     -1.0])


def generate_ray(pixel, intrinsics: Intrinsics, pose: Pose, twist=None):
    """World-space ray through a pixel plus the pose Jacobian.

    Args:
        pixel: (u, v) image coordinates inside the image.
        intrinsics: pinhole parameters.
        pose: camera-to-world transform.
        twist: the se(3) parameters realizing ``pose``; recovered by
            ``log_map`` when omitted.

    Returns:
        (ray, jac): the ray (origin at the camera center, unit direction)
        and the (3, 6) Jacobian of the un-normalized world point
        R [x_I; -1] + t with respect to the twist.
    """
    if twist is None:
        twist = log_map(pose)
    vec = twist.vector if isinstance(twist, Twist) else np.asarray(
        twist, dtype=np.float64)
    d_cam = pixel_direction(pixel, intrinsics)
    d_world = pose.R @ d_cam
    direction = d_world / np.linalg.norm(d_world)
    jac = origin_jacobian(vec)
    jac = jac.copy()
    jac[:, :3] += rotation_point_jacobian(vec[:3], d_cam)
    return Ray(origin=pose.t.copy(), direction=direction), jac


def perturb_poses(poses, sigma: float, seed) -> np.ndarray:
    """Additive Gaussian noise on the twist parameters of each pose.

    Returns the (n, 6) array of perturbed twists log(pose) + N(0, sigma^2 I),
    deterministic for a given seed.  sigma = 0 returns the exact logs.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    out = np.empty((len(poses), 6))
    for i, pose in enumerate(poses):
        noise = sigma * rng.standard_normal(6)
        out[i] = log_map(pose).vector + noise
    return out


def rotation_error(r_a, r_b) -> float:
    """Geodesic angle between two rotations, in degrees.

    Evaluates the relative rotation's angle as atan2(|skew part|, cosine),
    which equals arccos((trace - 1) / 2) with the trace clamped into the
    arccos domain, but stays exact at 0 (identical inputs give exactly 0
    because the relative rotation is computed symmetrically) and well
    conditioned at 180 degrees.  Symmetric in its arguments bit-for-bit.
    """
    a = np.asarray(r_a, dtype=np.float64)
    b = np.asarray(r_b, dtype=np.float64)
    m = a @ b.T
    cos_term = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    sk = m - m.T
    sin_term = 0.5 * np.sqrt(sk[2, 1] ** 2 + sk[0, 2] ** 2 + sk[1, 0] ** 2)
    return float(np.degrees(np.arctan2(sin_term, cos_term)))


def translation_error(t_a, t_b) -> float:
    """Squared Euclidean distance between two translations."""
    d = np.asarray(t_a, dtype=np.float64) - np.asarray(t_b, dtype=np.float64)
    return float(np.sum(d * d))


@dataclass
class Similarity:
    """Scale / rotation / translation mapping one point set onto another."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose(R=self.rotation @ pose.R,
                    t=self.scale * self.rotation @ pose.t + self.translation)

    def inverse(self) -> "Similarity":
        rot_inv = self.rotation.T
        return Similarity(scale=1.0 / self.scale, rotation=rot_inv,
                          translation=-rot_inv @ self.translation / self.scale)


def procrustes_align(learned, reference):
    """Least-squares similarity alignment of camera centers (Umeyama).

    Fits (scale, rotation, translation) minimizing the squared distance
    between transformed learned camera centers and the reference centers,
    with the rotation constrained to be proper (no reflections), then maps
    the full learned poses through the fit.

    Args:
        learned, reference: matching lists of Pose.

    Returns:
        (similarity, aligned): the fitted transform and the transformed
        learned poses.

    Raises:
        ValueError: fewer than 3 cameras, or coincident/collinear centers.
    """
    if len(learned) != len(reference):
        raise ValueError("pose sets must have equal length")
    n = len(learned)
    if n < 3:
        raise ValueError("need at least 3 camera centers")
    src = np.stack([p.t for p in learned]).astype(np.float64)
    dst = np.stack([p.t for p in reference]).astype(np.float64)
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    x = src - mu_src
    y = dst - mu_dst
    var_src = (x ** 2).sum() / n
    if var_src < 1e-18:
        raise ValueError("camera centers are coincident")
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[1] < 1e-9 * sv[0]:
        raise ValueError("camera centers are collinear")
    cov = y.T @ x / n
    u, d, vt = np.linalg.svd(cov)
    s_diag = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        s_diag[2] = -1.0
    rot = u @ np.diag(s_diag) @ vt
    scale = float((d * s_diag).sum() / var_src)
    trans = mu_dst - scale * rot @ mu_src
    sim = Similarity(scale=scale, rotation=rot, translation=trans)
    aligned = [sim.apply_pose(p) for p in learned]
    return sim, aligned


def pose_set_errors(learned, reference):
    """Post-alignment rotation (degrees) and squared-translation errors.

    Returns (rot_errors, trans_errors, similarity) with one entry per
    camera, computed after Procrustes alignment of the learned set.
    """
    sim, aligned = procrustes_align(learned, reference)
    rot = np.array([rotation_error(a.R, r.R)
                    for a, r in zip(aligned, reference)])
    trans = np.array([translation_error(a.t, r.t)
                      for a, r in zip(aligned, reference)])
    return rot, trans, sim
