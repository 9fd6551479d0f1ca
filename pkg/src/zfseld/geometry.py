"""Direction-of-arrival geometry primitives.

Conventions used throughout the toolkit:

* Right-handed Cartesian frame: x points forward, y left, z up.
* Spherical angles in degrees at API boundaries: azimuth in [-180, 180)
  measured counter-clockwise from x toward y, elevation in [-90, 90].
* First-order ambisonics channels in ACN order (W, Y, Z, X) with SN3D
  normalization, so the directional gains equal the direction cosines.

An activity-coupled DOA vector stores the activity as the length of the
Cartesian direction vector; ``encode_accdoa``/``decode_accdoa`` convert
between the coupled and the (activity, unit direction) views.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidDirectionError

UNIT_NORM_ATOL = 1e-4
ZERO_NORM_EPS = 1e-8


def _check_unit(v: np.ndarray, what: str) -> None:
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > UNIT_NORM_ATOL:
        raise InvalidDirectionError(f"{what} must be a unit vector, got norm {n:.6g}")


def encode_accdoa(activity: float, doa: np.ndarray) -> np.ndarray:
    """Couple an activity scalar in [0, 1] with a unit DOA into one 3-vector."""
    doa = np.asarray(doa, dtype=float)
    if activity > 0.0:
        _check_unit(doa, "doa")
    return activity * doa


def decode_accdoa(p: np.ndarray) -> tuple[float, np.ndarray | None]:
    """Split a coupled vector into (activity, unit direction).

    The activity is the vector norm; the direction is None for a
    (near-)zero vector, which is how inactive tracks are represented.
    """
    p = np.asarray(p, dtype=float)
    activity = float(np.linalg.norm(p))
    if activity <= ZERO_NORM_EPS:
        return 0.0, None
    return activity, p / activity


def angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Great-circle angle between two unit vectors, in degrees.

    Computed as 2*arcsin(|a - b| / 2), which is exact (0.0) for identical
    vectors and well-conditioned for small angles, unlike arccos of the
    dot product.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_unit(a, "a")
    _check_unit(b, "b")
    half_chord = 0.5 * np.linalg.norm(a - b)
    return float(np.degrees(2.0 * np.arcsin(np.clip(half_chord, 0.0, 1.0))))


def pairwise_angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle matrix (degrees) between rows of ``a`` (R, 3) and ``b`` (P, 3)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    half_chord = 0.5 * np.linalg.norm(diff, axis=2)
    return np.degrees(2.0 * np.arcsin(np.clip(half_chord, 0.0, 1.0)))


def spherical_to_cartesian(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit direction vector for azimuth/elevation in degrees."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], dtype=float
    )


def cartesian_to_spherical(v: np.ndarray) -> tuple[float, float]:
    """(azimuth, elevation) in degrees; azimuth wrapped to [-180, 180)."""
    v = np.asarray(v, dtype=float)
    az = np.degrees(np.arctan2(v[1], v[0]))
    el = np.degrees(np.arcsin(np.clip(v[2] / max(np.linalg.norm(v), ZERO_NORM_EPS), -1.0, 1.0)))
    return wrap_azimuth(az), float(el)


def wrap_azimuth(az_deg: float) -> float:
    """Wrap an azimuth to [-180, 180)."""
    return float((az_deg + 180.0) % 360.0 - 180.0)


def foa_gains(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """First-order ambisonic encoding gains, ACN order (W, Y, Z, X), SN3D.

    W is the omnidirectional term (gain 1); the three first-order gains
    equal the y, z, x direction cosines of the source direction.
    """
    x, y, z = spherical_to_cartesian(azimuth_deg, elevation_deg)
    return np.array([1.0, y, z, x], dtype=float)


def _yaw_matrix(quarter_turns: int) -> np.ndarray:
    c, s = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}[quarter_turns % 4]
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def _build_rotation_table() -> list[tuple[str, np.ndarray]]:
    # Signed-permutation direction transforms: optional left/right mirror
    # (y -> -y), yaw by 0/90/180/270 degrees, optional up/down flip (z -> -z).
    table = []
    for flip_z in (1, -1):
        for mirror_y in (1, -1):
            for k in (0, 1, 2, 3):
                mat = _yaw_matrix(k) @ np.diag([1.0, mirror_y, flip_z])
                name = f"yaw{90 * k:03d}"
                if mirror_y < 0:
                    name += "_mirror"
                if flip_z < 0:
                    name += "_flip"
                table.append((name, mat))
    return table


#: The 16 discrete spatial transforms used for FOA augmentation: every
#: combination of a quarter-turn yaw, an optional azimuth mirror, and an
#: optional elevation flip. Each is a signed permutation of (x, y, z), so
#: it acts identically on source directions and on the (X, Y, Z) channels.
FOA_ROTATIONS: tuple[tuple[str, np.ndarray], ...] = tuple(_build_rotation_table())

N_FOA_ROTATIONS = len(FOA_ROTATIONS)


def rotation_matrix(rotation_id: int) -> np.ndarray:
    """Direction transform of one of the 16 discrete FOA rotations."""
    if not 0 <= rotation_id < N_FOA_ROTATIONS:
        raise InvalidDirectionError(
            f"rotation id must be in [0, {N_FOA_ROTATIONS}), got {rotation_id}"
        )
    return FOA_ROTATIONS[rotation_id][1]


def rotate_direction(rotation_id: int, v: np.ndarray) -> np.ndarray:
    """Apply a discrete rotation to direction vector(s) with shape (..., 3)."""
    mat = rotation_matrix(rotation_id)
    return np.asarray(v, dtype=float) @ mat.T
