"""Per-Fourier-mode linear forecaster with snapshot-cycle training.

The model maps a window of W past frames to the next frame, one complex
W-vector of weights per Fourier mode, with modes above a cutoff K zeroed
(max(|kx|, |ky|) > K). Training is plain mini-batch gradient descent on the
one-step spectral least-squares loss under a cosine-annealed learning rate;
the model is snapshotted at the end of every annealing cycle.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TrainingDivergedError
from .grid import Trajectory, as_field, is_power_of_two
from .sim import wavenumbers

MAGIC_MODEL = b"CDYM"
MODEL_VERSION = 1

_MODEL_HEADER = struct.Struct("<4sIIII")  # magic, version, H, W, K


@dataclass
class TrainSchedule:
    """Cosine annealing cycle: eta_max down to eta_min over T steps, M cycles."""

    eta_max: float = 0.01
    eta_min: float = 0.0001
    steps_per_cycle: int = 100
    m_cycles: int = 6

    def __post_init__(self):
        if not (self.eta_max > self.eta_min > 0):
            raise ValueError("need eta_max > eta_min > 0")
        if self.steps_per_cycle < 2:
            raise ValueError("steps_per_cycle must be >= 2")
        if self.m_cycles < 1:
            raise ValueError("m_cycles must be >= 1")


def lr_at(schedule: TrainSchedule, t: int) -> float:
    """Learning rate at position t within a cycle:
    eta_min + (eta_max - eta_min)/2 * (1 + cos(t*pi/T)).
    """
    if not 0 <= t <= schedule.steps_per_cycle:
        raise ValueError(f"t={t} outside [0, {schedule.steps_per_cycle}]")
    half_span = 0.5 * (schedule.eta_max - schedule.eta_min)
    return schedule.eta_min + half_span * (1.0 + math.cos(t * math.pi / schedule.steps_per_cycle))


class _ModeGeometry:
    """Per-grid-size index helpers: cutoff masks and Hermitian pairing."""

    def __init__(self, h: int):
        kx, ky = wavenumbers(h)
        self.kmax = np.maximum(np.abs(kx), np.abs(ky)).astype(int)
        idx = np.arange(h)
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        ni, nj = (-ii) % h, (-jj) % h
        take_self = (ii < ni) | ((ii == ni) & (jj <= nj))
        self.rep_i = np.where(take_self, ii, ni)
        self.rep_j = np.where(take_self, jj, nj)
        self.neg = (-idx) % h

    def cutoff_mask(self, k_cut: int) -> np.ndarray:
        return self.kmax <= k_cut


_GEOMETRY: dict[int, _ModeGeometry] = {}


def _geometry(h: int) -> _ModeGeometry:
    if h not in _GEOMETRY:
        _GEOMETRY[h] = _ModeGeometry(h)
    return _GEOMETRY[h]


def hermitize(coeffs: np.ndarray) -> np.ndarray:
    """Project onto conjugate symmetry c[k] = conj(c[-k]) (first two axes)."""
    h = coeffs.shape[0]
    neg = _geometry(h).neg
    mirrored = coeffs[np.ix_(neg, neg)]
    return 0.5 * (coeffs + np.conj(mirrored))


@dataclass
class SurrogateModel:
    """Linear spectral propagator: coeffs has shape (H, H, W)."""

    coeffs: np.ndarray
    mode_cutoff: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 3 or self.coeffs.shape[0] != self.coeffs.shape[1]:
            raise ValueError(f"coeffs must be (H, H, W), got {self.coeffs.shape}")
        h = self.coeffs.shape[0]
        if not is_power_of_two(h) or h < 4:
            raise ValueError(f"grid size must be a power of two >= 4, got {h}")
        if self.coeffs.shape[2] < 1:
            raise ValueError("window must be >= 1")
        if not 0 <= self.mode_cutoff <= h // 2 - 1:
            raise ValueError(f"mode_cutoff must be in [0, {h // 2 - 1}]")

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def window(self) -> int:
        return self.coeffs.shape[2]

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(self.coeffs.copy(), self.mode_cutoff)

    def _window_hat(self, window_fields) -> np.ndarray:
        frames = np.asarray(window_fields, dtype=np.float64)
        if frames.ndim != 3 or len(frames) != self.window:
            raise ValueError(
                f"expected {self.window} frames of shape ({self.size}, {self.size})"
            )
        if frames.shape[1] != self.size or frames.shape[2] != self.size:
            raise ValueError(
                f"frame shape {frames.shape[1:]} does not match model size {self.size}"
            )
        return np.fft.fft2(frames)

    def predict(self, window_fields) -> np.ndarray:
        """Deterministic one-step forecast (real-valued)."""
        win_hat = self._window_hat(window_fields)
        y_hat = np.einsum("wij,ijw->ij", win_hat, self.coeffs)
        return np.fft.ifft2(y_hat).real

    def predict_dropout(self, window_fields, p: float, seed: int) -> np.ndarray:
        """Bernoulli-masked forecast: each mode contribution survives with
        probability 1-p and is scaled by 1/(1-p). Masks are paired across
        k and -k so the output stays real.
        """
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        if p == 0.0:
            return self.predict(window_fields)
        win_hat = self._window_hat(window_fields)
        y_hat = np.einsum("wij,ijw->ij", win_hat, self.coeffs)
        geo = _geometry(self.size)
        u = np.random.default_rng(seed).random((self.size, self.size))
        keep = u[geo.rep_i, geo.rep_j] >= p
        return np.fft.ifft2(y_hat * keep / (1.0 - p)).real


def rollout(model, init_window, horizon: int, mode: str = "deterministic",
            p: float = 0.05, seed: int = 0) -> np.ndarray:
    """Autoregressive forecast: each prediction is appended, the window slides.

    ``model`` is anything with ``window`` and ``predict`` (and
    ``predict_dropout`` for mode="dropout"). Returns the horizon predicted
    frames, shape (horizon, H, H).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if mode not in ("deterministic", "dropout"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    window = [as_field(f) for f in init_window]
    if len(window) != model.window:
        raise ValueError(f"expected window of {model.window} frames, got {len(window)}")
    if mode == "dropout":
        step_seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=horizon)
    frames = []
    for step in range(horizon):
        if mode == "deterministic":
            nxt = model.predict(window)
        else:
            nxt = model.predict_dropout(window, p, int(step_seeds[step]))
        frames.append(nxt)
        window = window[1:] + [nxt]
    return np.stack(frames)


@dataclass
class SnapshotSet:
    """Models saved at successive annealing-cycle minima."""

    models: list
    cycle_losses: list = field(default_factory=list)  # (start, end) per cycle

    def __post_init__(self):
        if not self.models:
            raise ValueError("snapshot set is empty")
        first = self.models[0]
        for m in self.models:
            if (m.size, m.window, m.mode_cutoff) != (first.size, first.window, first.mode_cutoff):
                raise ValueError("snapshots disagree on (H, W, K)")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def final(self) -> SurrogateModel:
        return self.models[-1]


class _PairSet:
    """(window, target) pairs over the spectral frames of a trajectory list."""

    def __init__(self, trajectories: list[Trajectory], window: int):
        if not trajectories:
            raise ValueError("no training trajectories")
        self.window = window
        self.spec_frames = [np.fft.fft2(t.frames) for t in trajectories]
        self.index = [
            (ti, n)
            for ti, t in enumerate(trajectories)
            for n in range(window, len(t))
        ]
        if not self.index:
            raise ValueError("no trajectory is long enough for a (window, target) pair")
        h = trajectories[0].size
        if any(t.size != h for t in trajectories):
            raise ValueError("trajectories disagree on grid size")
        self.size = h

    def __len__(self) -> int:
        return len(self.index)

    def gather(self, which) -> tuple[np.ndarray, np.ndarray]:
        xs = np.stack([self.spec_frames[ti][n - self.window : n] for ti, n in which])
        ys = np.stack([self.spec_frames[ti][n] for ti, n in which])
        return xs, ys

    def mode_energy(self) -> np.ndarray:
        """Mean |x|^2 per mode over all pairs and window positions."""
        total = np.zeros((self.size, self.size))
        for ti, n in self.index:
            x = self.spec_frames[ti][n - self.window : n]
            total += np.mean(np.abs(x) ** 2, axis=0)
        return total / len(self.index)


def _batch_loss(residual_hat: np.ndarray, h: int) -> float:
    # per-cell MSE via Parseval: sum_cells err^2 = (1/H^2) sum_k |r_k|^2
    return float(np.mean(np.abs(residual_hat) ** 2) / (h * h))


def dataset_loss(model: SurrogateModel, pairs: _PairSet, batch: int = 256) -> float:
    """Full-data one-step per-cell MSE."""
    total, count = 0.0, 0
    for lo in range(0, len(pairs), batch):
        xs, ys = pairs.gather(pairs.index[lo : lo + batch])
        pred = np.einsum("bwij,ijw->bij", xs, model.coeffs)
        total += np.sum(np.abs(ys - pred) ** 2)
        count += len(xs)
    return total / (count * pairs.size**4)


def train_snapshots(
    trajectories: list[Trajectory],
    schedule: TrainSchedule,
    window: int = 10,
    mode_cutoff: int | None = None,
    batch_size: int = 16,
    seed: int = 0,
) -> SnapshotSet:
    """Run M cosine-annealing cycles of T mini-batch gradient steps and save
    the model at every cycle end.

    The gradient for each mode is preconditioned by that mode's mean window
    energy (normalized LMS), so one learning rate serves all modes. Data is
    reshuffled at each cycle start; everything is deterministic per seed.
    """
    pairs = _PairSet(trajectories, window)
    h = pairs.size
    if mode_cutoff is None:
        mode_cutoff = h // 4
    geo = _geometry(h)
    active = geo.cutoff_mask(mode_cutoff)

    energy = pairs.mode_energy()
    scale = np.where(energy > 0, energy, 1.0)

    rng = np.random.default_rng(seed)
    model = SurrogateModel(np.zeros((h, h, window), dtype=np.complex128), mode_cutoff)
    snapshots: list[SurrogateModel] = []
    cycle_losses: list[tuple[float, float]] = []

    for cycle in range(schedule.m_cycles):
        order = rng.permutation(len(pairs))
        loss_start = dataset_loss(model, pairs)
        cursor = 0
        for step in range(schedule.steps_per_cycle):
            if cursor >= len(order):
                cursor = 0
            which = [pairs.index[i] for i in order[cursor : cursor + batch_size]]
            cursor += batch_size
            xs, ys = pairs.gather(which)
            pred = np.einsum("bwij,ijw->bij", xs, model.coeffs)
            resid = ys - pred
            step_loss = _batch_loss(resid, h)
            if not math.isfinite(step_loss):
                raise TrainingDivergedError(cycle, step, step_loss)
            grad = -np.einsum("bwij,bij->ijw", np.conj(xs), resid) / len(xs)
            update = grad / scale[..., None]
            model.coeffs -= lr_at(schedule, step) * update
            model.coeffs = hermitize(model.coeffs)
            model.coeffs *= active[..., None]
        loss_end = dataset_loss(model, pairs)
        cycle_losses.append((loss_start, loss_end))
        snapshots.append(model.copy())

    return SnapshotSet(snapshots, cycle_losses)


def fit_ridge(
    trajectories: list[Trajectory],
    window: int = 10,
    lam: float = 1e-8,
    mode_cutoff: int | None = None,
) -> SurrogateModel:
    """Closed-form per-mode ridge regression (the oracle the trainer is
    validated against)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    pairs = _PairSet(trajectories, window)
    h = pairs.size
    if mode_cutoff is None:
        mode_cutoff = h // 4
    active = _geometry(h).cutoff_mask(mode_cutoff)

    gram = np.zeros((h, h, window, window), dtype=np.complex128)
    moment = np.zeros((h, h, window), dtype=np.complex128)
    batch = 256
    for lo in range(0, len(pairs), batch):
        xs, ys = pairs.gather(pairs.index[lo : lo + batch])
        gram += np.einsum("bwij,bvij->ijwv", np.conj(xs), xs)
        moment += np.einsum("bwij,bij->ijw", np.conj(xs), ys)

    a = gram[active] + lam * np.eye(window)
    b = moment[active]
    try:
        solved = np.linalg.solve(a, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericsErrorFromSingular(exc) from exc
    coeffs = np.zeros((h, h, window), dtype=np.complex128)
    coeffs[active] = solved
    coeffs = hermitize(coeffs)
    coeffs *= active[..., None]
    return SurrogateModel(coeffs, mode_cutoff)


def NumericsErrorFromSingular(exc):
    from .errors import NumericsError

    return NumericsError(f"singular normal equations (lambda too small): {exc}")


def save_model(path, model: SurrogateModel) -> None:
    """Binary container: header + (H, H, W) complex coefficients as f64 pairs."""
    header = _MODEL_HEADER.pack(
        MAGIC_MODEL, MODEL_VERSION, model.size, model.window, model.mode_cutoff
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.coeffs, dtype="<c16").tobytes())


def load_model(path) -> SurrogateModel:
    with open(path, "rb") as fh:
        raw = fh.read(_MODEL_HEADER.size)
        if len(raw) != _MODEL_HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, h, w, k = _MODEL_HEADER.unpack(raw)
        if magic != MAGIC_MODEL:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(16 * h * h * w), dtype="<c16")
    if data.size != h * h * w:
        raise FormatError(f"{path}: truncated coefficient data")
    return SurrogateModel(data.reshape(h, h, w).astype(np.complex128), k)


def save_snapshots(directory, snapshots: SnapshotSet) -> None:
    import os

    os.makedirs(directory, exist_ok=True)
    for i, m in enumerate(snapshots.models):
        save_model(os.path.join(directory, f"model-{i:02d}.cdym"), m)
    first = snapshots.models[0]
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"count = {len(snapshots)}\n")
        fh.write(f"size = {first.size}\n")
        fh.write(f"window = {first.window}\n")
        fh.write(f"mode_cutoff = {first.mode_cutoff}\n")


def load_snapshots(directory) -> SnapshotSet:
    import os

    manifest = os.path.join(directory, "manifest.txt")
    entries = {}
    with open(manifest, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, val = line.split("=", 1)
                entries[key.strip()] = val.strip()
    count = int(entries["count"])
    models = [
        load_model(os.path.join(directory, f"model-{i:02d}.cdym")) for i in range(count)
    ]
    return SnapshotSet(models)
