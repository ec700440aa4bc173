"""Walker-Delta constellation, circular two-body propagation and link geometry.

All positions are expressed in an Earth-centred, Earth-fixed (ECEF) frame
whose z axis is the rotation pole.  Velocities are inertial velocities
expressed in the ECEF axes (the Earth-rotation transport term is not
subtracted), so their magnitude is the circular orbital speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS = 6_371_000.0
EARTH_ROTATION_RATE = 7.2921159e-5
GRAVITATIONAL_PARAMETER = 3.986004418e14


class ParameterError(ValueError):
    """Raised for physically invalid constellation or user parameters."""


class CoverageError(RuntimeError):
    """Fewer satellites are visible than the serving set requires."""

    def __init__(self, visible: int, required: int):
        super().__init__(f"only {visible} satellites visible, {required} required")
        self.visible = visible
        self.required = required


@dataclass(frozen=True)
class ConstellationSpec:
    planes: int = 28
    sats_per_plane: int = 28
    inclination: float = math.radians(53.0)
    altitude: float = 590_000.0
    phasing_factor: int = 1
    earth_radius: float = EARTH_RADIUS
    earth_rotation_rate: float = EARTH_ROTATION_RATE
    gravitational_parameter: float = GRAVITATIONAL_PARAMETER

    def validate(self) -> None:
        if self.planes < 1 or self.sats_per_plane < 1:
            raise ParameterError("planes and sats_per_plane must be >= 1")
        if not 0.0 <= self.inclination <= math.pi:
            raise ParameterError("inclination must lie in [0, pi]")
        if self.altitude <= 0:
            raise ParameterError("altitude must be positive")
        if not 0 <= self.phasing_factor < self.planes:
            raise ParameterError("phasing_factor must satisfy 0 <= F < planes")
        if self.earth_radius <= 0 or self.gravitational_parameter <= 0:
            raise ParameterError("earth_radius and gravitational_parameter must be positive")

    @property
    def orbital_radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def mean_motion(self) -> float:
        return math.sqrt(self.gravitational_parameter / self.orbital_radius**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion

    @property
    def orbital_speed(self) -> float:
        return self.orbital_radius * self.mean_motion


@dataclass(frozen=True)
class OrbitalElements:
    """Circular-orbit elements for every satellite, indexed by global id."""

    spec: ConstellationSpec
    raan: np.ndarray
    phase: np.ndarray

    def __len__(self) -> int:
        return self.raan.size


@dataclass(frozen=True)
class GroundUser:
    id: int
    latitude: float
    longitude: float

    def __post_init__(self):
        if abs(self.latitude) > math.pi / 2 + 1e-12:
            raise ParameterError(f"user {self.id}: |latitude| exceeds pi/2")
        if not -math.pi - 1e-12 <= self.longitude <= math.pi + 1e-12:
            raise ParameterError(f"user {self.id}: longitude outside [-pi, pi]")


@dataclass
class FrameSnapshot:
    """Geometry of one frame, sampled at the frame midpoint.

    Per-link arrays have shape ``(L, U)`` with rows ordered as
    ``serving_set``.  ``aod_el`` is measured from the array plane, so a user
    on the array normal has ``aod_el = pi/2`` and ``boresight_angle = 0``.
    """

    frame_index: int
    time: float
    serving_set: tuple[int, ...]
    sat_positions: np.ndarray
    sat_velocities: np.ndarray
    user_positions: np.ndarray
    distance: np.ndarray
    aod_az: np.ndarray
    aod_el: np.ndarray
    boresight_angle: np.ndarray
    visible: np.ndarray
    center_distance: np.ndarray = field(default=None)

    @property
    def num_sats(self) -> int:
        return len(self.serving_set)

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    def to_dict(self) -> dict:
        """JSON-friendly dump; SI units (m, m/s, rad, s)."""
        out = {
            "frame_index": self.frame_index,
            "time_s": self.time,
            "serving_set": list(self.serving_set),
            "sat_positions_m": self.sat_positions.tolist(),
            "sat_velocities_mps": self.sat_velocities.tolist(),
            "user_positions_m": self.user_positions.tolist(),
            "distance_m": self.distance.tolist(),
            "aod_az_rad": self.aod_az.tolist(),
            "aod_el_rad": self.aod_el.tolist(),
            "boresight_angle_rad": self.boresight_angle.tolist(),
            "visible": self.visible.astype(int).tolist(),
        }
        if self.center_distance is not None:
            out["center_distance_m"] = self.center_distance.tolist()
        return out


def build_walker_delta(spec: ConstellationSpec) -> OrbitalElements:
    spec.validate()
    P, S, F = spec.planes, spec.sats_per_plane, spec.phasing_factor
    p = np.repeat(np.arange(P), S)
    s = np.tile(np.arange(S), P)
    raan = 2.0 * np.pi * p / P
    phase = 2.0 * np.pi * s / S + 2.0 * np.pi * F * p / (P * S)
    return OrbitalElements(spec, raan, np.mod(phase, 2.0 * np.pi))


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def propagate(elements: OrbitalElements, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions and velocities ``(n, 3)`` of all satellites at time ``t``."""
    if t < 0:
        raise ParameterError("propagation time must be non-negative")
    spec = elements.spec
    a, n, inc = spec.orbital_radius, spec.mean_motion, spec.inclination
    u = elements.phase + n * t
    cu, su = np.cos(u), np.sin(u)
    cO, sO = np.cos(elements.raan), np.sin(elements.raan)
    ci, si = math.cos(inc), math.sin(inc)
    pos = a * np.stack([cO * cu - sO * su * ci, sO * cu + cO * su * ci, su * si], axis=1)
    vel = a * n * np.stack([-cO * su - sO * cu * ci, -sO * su + cO * cu * ci, cu * si], axis=1)
    rot = _rot_z(-spec.earth_rotation_rate * t)
    return pos @ rot.T, vel @ rot.T


def geodetic_to_ecef(latitude, longitude, radius: float = EARTH_RADIUS) -> np.ndarray:
    lat = np.asarray(latitude, dtype=float)
    lon = np.asarray(longitude, dtype=float)
    return radius * np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def elevation_angles(ground: np.ndarray, sats: np.ndarray) -> np.ndarray:
    """Elevation of each satellite seen from each ground point, shape ``(G, S)``."""
    ground = np.atleast_2d(ground)
    up = ground / np.linalg.norm(ground, axis=1, keepdims=True)
    rel = sats[None, :, :] - ground[:, None, :]
    rng = np.linalg.norm(rel, axis=2)
    sin_el = np.einsum("gsk,gk->gs", rel, up) / rng
    return np.arcsin(np.clip(sin_el, -1.0, 1.0))


def select_serving_set(
    positions: np.ndarray,
    service_center: np.ndarray,
    L: int,
    min_elevation: float = math.radians(10.0),
) -> tuple[int, ...]:
    """Ids of the ``L`` visible satellites nearest the service centre, nearest first."""
    center = np.asarray(service_center, dtype=float)
    el = elevation_angles(center[None, :], positions)[0]
    visible = np.flatnonzero(el >= min_elevation)
    if visible.size < L:
        raise CoverageError(int(visible.size), L)
    dist = np.linalg.norm(positions[visible] - center, axis=1)
    # lexsort: last key is primary; ties fall back to the satellite id
    order = np.lexsort((visible, dist))
    return tuple(int(i) for i in visible[order[:L]])


def array_frame(position: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Rows are the (horizontal, vertical, normal) axes of a nadir-pointing array."""
    normal = -position / np.linalg.norm(position)
    h = velocity - np.dot(velocity, normal) * normal
    h /= np.linalg.norm(h)
    v = np.cross(normal, h)
    return np.stack([h, v, normal])


def frame_geometry(
    k: int,
    serving_set,
    positions: np.ndarray,
    velocities: np.ndarray,
    users,
    service_center: np.ndarray | None = None,
    time: float = 0.0,
    earth_radius: float = EARTH_RADIUS,
) -> FrameSnapshot:
    """Link geometry between the serving satellites and the users.

    ``positions``/``velocities`` are indexed by global satellite id.  Links
    whose satellite sits below the user's geometric horizon are flagged
    invisible; their distance is still reported.
    """
    ids = tuple(int(i) for i in serving_set)
    if not ids:
        raise ParameterError("serving set is empty")
    users = list(users)
    if not users:
        raise ParameterError("no users")
    upos = geodetic_to_ecef(
        [u.latitude for u in users], [u.longitude for u in users], earth_radius
    )
    spos = positions[list(ids)]
    svel = velocities[list(ids)]

    rel = upos[None, :, :] - spos[:, None, :]
    dist = np.linalg.norm(rel, axis=2)
    unit = rel / dist[..., None]
    frames = np.stack([array_frame(p, v) for p, v in zip(spos, svel)])
    local = np.einsum("lak,luk->lua", frames, unit)
    ux, uy, uz = local[..., 0], local[..., 1], local[..., 2]
    boresight = np.arccos(np.clip(uz, -1.0, 1.0))
    az = np.arctan2(uy, ux)
    el = np.arctan2(uz, np.hypot(ux, uy))
    visible = elevation_angles(upos, spos).T >= 0.0

    center_dist = None
    if service_center is not None:
        center_dist = np.linalg.norm(spos - np.asarray(service_center), axis=1)
    return FrameSnapshot(
        frame_index=k,
        time=time,
        serving_set=ids,
        sat_positions=spos,
        sat_velocities=svel,
        user_positions=upos,
        distance=dist,
        aod_az=az,
        aod_el=el,
        boresight_angle=boresight,
        visible=visible,
        center_distance=center_dist,
    )


def place_users(
    n_users: int,
    center_lat: float,
    center_lon: float,
    radius: float,
    rng: np.random.Generator,
    earth_radius: float = EARTH_RADIUS,
) -> list[GroundUser]:
    """Uniform placement on the spherical cap of ground radius ``radius``."""
    if n_users < 1:
        raise ParameterError("need at least one user")
    max_angle = radius / earth_radius
    cos_c = rng.uniform(math.cos(max_angle), 1.0, size=n_users)
    c = np.arccos(cos_c)
    bearing = rng.uniform(0.0, 2.0 * math.pi, size=n_users)
    lat0, lon0 = center_lat, center_lon
    lat = np.arcsin(
        math.sin(lat0) * np.cos(c) + math.cos(lat0) * np.sin(c) * np.cos(bearing)
    )
    lon = lon0 + np.arctan2(
        np.sin(bearing) * np.sin(c) * math.cos(lat0),
        np.cos(c) - math.sin(lat0) * np.sin(lat),
    )
    lon = (lon + np.pi) % (2.0 * np.pi) - np.pi
    return [GroundUser(i, float(a), float(b)) for i, (a, b) in enumerate(zip(lat, lon))]
