"""Field containers and their on-disk formats.

Binary layout (little endian)::

    magic    8 bytes  b"MNFIELD1"
    kind     u8       0 = scalar, 1 = vector, 2 = matrix
    dtype    u8       0 = float64, 1 = complex128
    ndims    u8
    pad      u8 x 5
    dims     u64 x ndims
    payload  row-major values

A state file holds theta followed by vel, each with its own header.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import io
import math
import struct
from pathlib import Path

import numpy as np

from .grid import DomainSpec, ShapeError

MAGIC = b"MNFIELD1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}
_DTYPE_TAGS = {np.dtype("float64"): 0, np.dtype("complex128"): 1}

EULER = "euler"
LAGRANGE = "lagrange"


class AdmissibilityError(ValueError):
    """A field or map leaves the admissible set required by the scheme."""


@dataclass
class FieldState:
    theta: np.ndarray
    vel: np.ndarray
    frame: str = LAGRANGE
    time: float = 0.0

    def __post_init__(self):
        if self.frame not in (EULER, LAGRANGE):
            raise ValueError(f"unknown frame {self.frame!r}")

    def check(self, domain: DomainSpec) -> "FieldState":
        if self.theta.shape != domain.shape:
            raise ShapeError(f"theta shape {self.theta.shape} != {domain.shape}")
        if self.vel.shape != (domain.ndim_vec,) + domain.shape:
            raise ShapeError(f"vel shape {self.vel.shape} != {(domain.ndim_vec,) + domain.shape}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.vel))):
            raise ValueError("non-finite field values")
        return self

    def check_density(self, rho_star: float) -> None:
        worst = float(np.max(np.abs(self.theta)))
        if worst > rho_star / 2:
            raise AdmissibilityError(f"sup|theta| = {worst:.3e} exceeds rho*/2 = {rho_star / 2:.3e}")

    @classmethod
    def zeros(cls, domain: DomainSpec, frame: str = LAGRANGE, time: float = 0.0) -> "FieldState":
        return cls(np.zeros(domain.shape), np.zeros((domain.ndim_vec,) + domain.shape), frame, time)

    def scaled(self, alpha: float) -> "FieldState":
        return FieldState(alpha * self.theta, alpha * self.vel, self.frame, self.time)

    def __add__(self, other: "FieldState") -> "FieldState":
        return FieldState(self.theta + other.theta, self.vel + other.vel, self.frame, self.time)

    def __sub__(self, other: "FieldState") -> "FieldState":
        return FieldState(self.theta - other.theta, self.vel - other.vel, self.frame, self.time)

    def pack(self) -> np.ndarray:
        """(1 + d, *grid) array holding theta then the velocity components."""
        return np.concatenate([self.theta[None], self.vel])

    @classmethod
    def unpack(cls, arr: np.ndarray, frame: str = LAGRANGE, time: float = 0.0) -> "FieldState":
        return cls(np.array(arr[0]), np.array(arr[1:]), frame, time)


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: list[FieldState]
    dt_states: list[FieldState] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) == 0:
            raise ValueError("empty trajectory")
        if self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.states) != len(self.times):
            raise ValueError("states not aligned with times")
        if self.dt_states and len(self.dt_states) != len(self.times):
            raise ValueError("dt_states not aligned with times")

    def __len__(self):
        return len(self.times)

    @property
    def frame(self) -> str:
        return self.states[0].frame

    @property
    def has_derivatives(self) -> bool:
        return bool(self.dt_states)

    def scaled(self, alpha: float) -> "TrajectoryRecord":
        return TrajectoryRecord(self.times.copy(), [s.scaled(alpha) for s in self.states],
                                [s.scaled(alpha) for s in self.dt_states])

    def __sub__(self, other: "TrajectoryRecord") -> "TrajectoryRecord":
        if not np.array_equal(self.times, other.times):
            raise ValueError("trajectories live on different time grids")
        dts = []
        if self.dt_states and other.dt_states:
            dts = [a - b for a, b in zip(self.dt_states, other.dt_states)]
        return TrajectoryRecord(self.times.copy(), [a - b for a, b in zip(self.states, other.states)], dts)

    def truncated(self, n: int) -> "TrajectoryRecord":
        return TrajectoryRecord(self.times[:n].copy(), self.states[:n],
                                self.dt_states[:n] if self.dt_states else [])

    @classmethod
    def constant(cls, state: FieldState, times) -> "TrajectoryRecord":
        times = np.asarray(times, dtype=float)
        zero = FieldState(np.zeros_like(state.theta), np.zeros_like(state.vel), state.frame)
        return cls(times, [FieldState(state.theta, state.vel, state.frame, float(t)) for t in times],
                   [zero for _ in times])


# ---------------------------------------------------------------------------
# serialization

def _header(arr: np.ndarray, kind: int) -> bytes:
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    return MAGIC + struct.pack("<BBB5x", kind, tag, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)


def write_field(stream, arr: np.ndarray, kind: int) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_TAGS:
        arr = arr.astype(np.float64)
    stream.write(_header(arr, kind))
    stream.write(arr.astype(_DTYPES[_DTYPE_TAGS[arr.dtype]], copy=False).tobytes(order="C"))


def read_field(stream) -> tuple[int, np.ndarray]:
    magic = stream.read(8)
    if magic != MAGIC:
        raise ValueError("not an mnflow field record")
    kind, tag, ndims = struct.unpack("<BBB5x", stream.read(8))
    dims = struct.unpack(f"<{ndims}Q", stream.read(8 * ndims))
    dt = _DTYPES[tag]
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(stream.read(count * dt.itemsize), dtype=dt).reshape(dims)
    return kind, data.copy()


def save_state(path, state: FieldState) -> None:
    with open(path, "wb") as fh:
        write_field(fh, state.theta, 0)
        write_field(fh, state.vel, 1)


def load_state(path, frame: str = LAGRANGE, time: float = 0.0) -> FieldState:
    with open(path, "rb") as fh:
        _, theta = read_field(fh)
        _, vel = read_field(fh)
    return FieldState(theta, vel, frame, time)


def state_to_bytes(state: FieldState) -> bytes:
    buf = io.BytesIO()
    write_field(buf, state.theta, 0)
    write_field(buf, state.vel, 1)
    return buf.getvalue()


def state_to_csv(path, state: FieldState, domain: DomainSpec) -> None:
    """One row per grid point: coordinates, theta, velocity components."""
    if domain.periodic:
        xyz = domain.coords().reshape(3, -1)
        cols = ["x", "y", "z"]
    else:
        xyz = domain.coords()[None]
        cols = ["r"]
    vel = state.vel.reshape(state.vel.shape[0], -1)
    cols += ["theta"] + [f"v{i + 1}" for i in range(vel.shape[0])]
    data = np.vstack([xyz, state.theta.reshape(1, -1), vel]).T
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def state_from_csv(path, domain: DomainSpec, frame: str = LAGRANGE, time: float = 0.0) -> FieldState:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    off = 3 if domain.periodic else 1
    theta = data[:, off].reshape(domain.shape)
    vel = data[:, off + 1:].T.reshape((domain.ndim_vec,) + domain.shape)
    return FieldState(theta, vel, frame, time)


def save_checkpoints(directory, traj: TrajectoryRecord, every: int = 1) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i in range(0, len(traj), every):
        p = directory / f"state_{i:05d}.bin"
        save_state(p, traj.states[i])
        out.append(p)
    return out


def gaussian_bump(domain: DomainSpec, amplitude: float, width: float, center=None) -> np.ndarray:
    """exp(-|x - c|^2 / (2 w^2)) on the grid (periodic images ignored)."""
    x = domain.coords()
    if domain.periodic:
        c = np.full(3, domain.L / 2) if center is None else np.asarray(center, float)
        d2 = sum((x[i] - c[i]) ** 2 for i in range(3))
    else:
        c = 0.5 * (domain.R0 + domain.R) if center is None else float(center)
        d2 = (x - c) ** 2
    return amplitude * np.exp(-d2 / (2.0 * width ** 2))


def gaussian_state(domain: DomainSpec, amplitude: float, width: float = 1.0,
                   vel_amplitude: float | None = None) -> FieldState:
    """Gaussian density bump plus a smooth compactly concentrated velocity."""
    theta = gaussian_bump(domain, amplitude, width)
    va = amplitude if vel_amplitude is None else vel_amplitude
    if domain.periodic:
        g = gaussian_bump(domain, va, width)
        c = domain.L / 2
        x = domain.coords()
        vel = np.stack([g * (x[1] - c) / width, -g * (x[0] - c) / width, g * (x[2] - c) / width])
    else:
        r = domain.coords()
        vel = (va * np.sin(math.pi * (r - domain.R0) / (domain.R - domain.R0)) ** 2
               * gaussian_bump(domain, 1.0, width))[None]
    return FieldState(theta, vel, LAGRANGE, 0.0)
