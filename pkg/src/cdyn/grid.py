"""Grid data types, norms, rotation, dataset splits, and file containers.

A field is a plain ``(H, H)`` float64 array holding one spatial snapshot on a
periodic square grid, row-major. ``H`` must be a power of two (the spectral
transform needs it) and at least 4.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC_TRAJECTORY = b"CDYN"
CONTAINER_VERSION = 1

_HEADER = struct.Struct("<4sIIId")  # magic, version, H, frame count, dt


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def as_field(values) -> np.ndarray:
    """Validate and return a field as a float64 ``(H, H)`` array."""
    f = np.asarray(values, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"field must be square, got shape {f.shape}")
    h = f.shape[0]
    if h < 4 or not is_power_of_two(h):
        raise ValueError(f"grid size must be a power of two >= 4, got {h}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")
    return f


@dataclass
class Trajectory:
    """Time-ordered stack of fields with a uniform time step.

    ``frames`` has shape ``(T, H, H)`` with ``T >= 2``.
    """

    frames: np.ndarray
    dt: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1] != self.frames.shape[2]:
            raise ValueError(f"frames must be (T, H, H), got {self.frames.shape}")
        if len(self.frames) < 2:
            raise ValueError("trajectory needs at least 2 frames")
        h = self.frames.shape[1]
        if h < 4 or not is_power_of_two(h):
            raise ValueError(f"grid size must be a power of two >= 4, got {h}")
        if not float(self.dt) > 0.0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("trajectory contains non-finite values")

    @property
    def size(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return len(self.frames)

    def rotated(self) -> "Trajectory":
        """Quarter-turn every frame (see :func:`rot90`)."""
        return Trajectory(np.rot90(self.frames, axes=(1, 2)).copy(), self.dt)


@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint index sets partitioning a trajectory collection."""

    train: tuple
    val: tuple
    cal: tuple
    test: tuple

    def __post_init__(self):
        groups = (self.train, self.val, self.cal, self.test)
        all_idx = [i for g in groups for i in g]
        if len(set(all_idx)) != len(all_idx):
            raise ValueError("splits overlap")
        if set(all_idx) != set(range(len(all_idx))):
            raise ValueError("splits do not cover 0..n-1")
        if len(self.cal) < 1 or len(self.test) < 1:
            raise ValueError("calibration and test splits must be nonempty")


def rot90(f: np.ndarray) -> np.ndarray:
    """Counter-clockwise quarter turn: out[i][j] = in[j][H-1-i]."""
    f = as_field(f)
    return np.rot90(f).copy()


def l2_dist(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius norm of the difference, no grid-size normalization."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def make_splits(n_traj: int, seed: int) -> DatasetSplits:
    """Shuffle ``n_traj`` indices and split 70/20/5/5 (train/val/cal/test).

    Fractions are floored; the remainder goes to train. Deterministic for a
    fixed seed.
    """
    if n_traj < 20:
        raise ValueError("need at least 20 trajectories for nonempty cal/test")
    n_val = int(n_traj * 0.20)
    n_cal = int(n_traj * 0.05)
    n_test = int(n_traj * 0.05)
    n_train = n_traj - n_val - n_cal - n_test
    perm = np.random.default_rng(seed).permutation(n_traj)
    cuts = np.cumsum([n_train, n_val, n_cal])
    train, val, cal, test = np.split(perm, cuts)
    return DatasetSplits(
        train=tuple(int(i) for i in train),
        val=tuple(int(i) for i in val),
        cal=tuple(int(i) for i in cal),
        test=tuple(int(i) for i in test),
    )


def save_trajectory(path, traj: Trajectory) -> None:
    """Write the flat binary container: header + row-major f64 frames."""
    header = _HEADER.pack(
        MAGIC_TRAJECTORY, CONTAINER_VERSION, traj.size, len(traj), float(traj.dt)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.frames, dtype="<f8").tobytes())


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, h, n_frames, dt = _HEADER.unpack(raw)
        if magic != MAGIC_TRAJECTORY:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != CONTAINER_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(8 * n_frames * h * h), dtype="<f8")
    if data.size != n_frames * h * h:
        raise FormatError(f"{path}: truncated frame data")
    return Trajectory(data.reshape(n_frames, h, h).astype(np.float64), dt)


def field_to_csv(path, f: np.ndarray) -> None:
    """Plain CSV export for inspection, one row per grid row."""
    f = as_field(f)
    with open(path, "w", encoding="utf-8") as fh:
        for row in f:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
