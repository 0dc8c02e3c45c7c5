"""Desk-scale data generation: spectral transforms, random initial fields,
an exact periodic diffusion stepper, and a pseudo-spectral 2D Navier-Stokes
vorticity stepper.

Wavenumbers are integers k in {-H/2, ..., H/2 - 1} along each axis, so the
Laplacian multiplier is -|k|^2 and one diffusion step multiplies mode k by
exp(-nu |k|^2 dt).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import NumericsError
from .grid import Trajectory, as_field, is_power_of_two

DYNAMICS = ("diffusion", "ns")


@dataclass
class SimConfig:
    """Simulation parameters. Defaults are desk-scale artifact values."""

    size: int = 32
    nu: float = 1e-3
    dt: float = 1e-2
    frames_per_traj: int = 30
    forcing_amplitude: float = 0.1
    spectrum_slope: float = 4.0
    seed: int = 0
    record_every: int = 10
    dynamics: str = "ns"

    def __post_init__(self):
        if self.size < 4 or not is_power_of_two(self.size):
            raise ValueError(f"size must be a power of two >= 4, got {self.size}")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.frames_per_traj < 20:
            raise ValueError("frames_per_traj must be >= 20 (window 10 + horizon 10)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")

    @property
    def frame_dt(self) -> float:
        return self.dt * self.record_every


def wavenumbers(h: int):
    """Integer wavenumber meshes ``(kx, ky)``, each ``(H, H)``."""
    k = np.fft.fftfreq(h, d=1.0 / h)
    return np.meshgrid(k, k, indexing="ij")


def fft2(f: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT of a field (constant c maps to c*H^2 at k=0)."""
    f = as_field(f)
    return np.fft.fft2(f)


def ifft2(s: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT; the imaginary residual of a round trip is discarded."""
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or not is_power_of_two(s.shape[0]):
        raise ValueError(f"spectral field must be square power-of-two, got {s.shape}")
    return np.fft.ifft2(s).real


def grf_init(cfg: SimConfig, traj_index: int) -> np.ndarray:
    """Zero-mean Gaussian random field with isotropic |k|^(-slope) spectrum.

    Seeded by (cfg.seed, traj_index); the filter is normalized so the field
    has unit variance in expectation.
    """
    h = cfg.size
    rng = np.random.default_rng((cfg.seed, traj_index))
    white = rng.standard_normal((h, h))
    kx, ky = wavenumbers(h)
    ksq = kx * kx + ky * ky
    amp = np.zeros((h, h))
    nonzero = ksq > 0
    amp[nonzero] = ksq[nonzero] ** (-cfg.spectrum_slope / 4.0)
    amp /= np.sqrt(np.mean(amp * amp))
    out = np.fft.ifft2(np.fft.fft2(white) * amp).real
    return out


def step_diffusion_exact(f: np.ndarray, nu: float, dt: float) -> np.ndarray:
    """Advance the heat equation one step exactly: mode k scales by exp(-nu|k|^2 dt)."""
    f = as_field(f)
    kx, ky = wavenumbers(f.shape[0])
    decay = np.exp(-nu * (kx * kx + ky * ky) * dt)
    return np.fft.ifft2(np.fft.fft2(f) * decay).real


class _NSOperators:
    """Precomputed spectral operators for one grid size."""

    def __init__(self, h: int):
        kx, ky = wavenumbers(h)
        self.kx = kx
        self.ky = ky
        self.ksq = kx * kx + ky * ky
        inv = np.zeros_like(self.ksq)
        nonzero = self.ksq > 0
        inv[nonzero] = 1.0 / self.ksq[nonzero]
        self.inv_ksq = inv
        kmax = h // 2
        self.dealias = (np.abs(kx) < (2.0 / 3.0) * kmax) & (np.abs(ky) < (2.0 / 3.0) * kmax)
        self.kmax_active = (2.0 / 3.0) * kmax
        # steady forcing family: A*(sin(x+y) + cos(x+y)) on [0, 2pi)^2,
        # mean-subtracted so the zero mode stays exactly quiescent
        x = 2.0 * np.pi * np.arange(h) / h
        xx, yy = np.meshgrid(x, x, indexing="ij")
        base = np.sin(xx + yy) + np.cos(xx + yy)
        self.forcing_base = base - base.mean()


_NS_CACHE: dict[int, _NSOperators] = {}


def _ns_ops(h: int) -> _NSOperators:
    if h not in _NS_CACHE:
        _NS_CACHE[h] = _NSOperators(h)
    return _NS_CACHE[h]


def _ns_rhs(omega_hat: np.ndarray, nu: float, ops: _NSOperators, forcing_hat: np.ndarray) -> np.ndarray:
    psi_hat = omega_hat * ops.inv_ksq
    u = np.fft.ifft2(1j * ops.ky * psi_hat).real
    v = np.fft.ifft2(-1j * ops.kx * psi_hat).real
    om_x = np.fft.ifft2(1j * ops.kx * omega_hat).real
    om_y = np.fft.ifft2(1j * ops.ky * omega_hat).real
    adv_hat = np.fft.fft2(u * om_x + v * om_y)
    adv_hat *= ops.dealias
    adv_hat[0, 0] = 0.0  # advection moves no mean vorticity
    return -adv_hat - nu * ops.ksq * omega_hat + forcing_hat


def step_ns(omega: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """One RK4 step of the 2/3-dealiased pseudo-spectral vorticity equation.

    Velocity comes from the streamfunction (lap psi = -omega,
    u = (dpsi/dy, -dpsi/dx)); forcing is the steady zero-mean sinusoid of
    amplitude ``cfg.forcing_amplitude``.
    """
    omega = as_field(omega)
    ops = _ns_ops(omega.shape[0])
    forcing_hat = np.fft.fft2(cfg.forcing_amplitude * ops.forcing_base)

    omega_hat = np.fft.fft2(omega)
    psi_hat = omega_hat * ops.inv_ksq
    u = np.fft.ifft2(1j * ops.ky * psi_hat).real
    v = np.fft.ifft2(-1j * ops.kx * psi_hat).real
    umax = max(np.max(np.abs(u)), np.max(np.abs(v)))
    cfl = cfg.dt * umax * ops.kmax_active
    if cfl > 2.0:
        raise NumericsError(
            f"CFL estimate {cfl:.3f} exceeds 2.0 (dt={cfg.dt}, |u|max={umax:.3f})"
        )

    dt = cfg.dt
    k1 = _ns_rhs(omega_hat, cfg.nu, ops, forcing_hat)
    k2 = _ns_rhs(omega_hat + 0.5 * dt * k1, cfg.nu, ops, forcing_hat)
    k3 = _ns_rhs(omega_hat + 0.5 * dt * k2, cfg.nu, ops, forcing_hat)
    k4 = _ns_rhs(omega_hat + dt * k3, cfg.nu, ops, forcing_hat)
    out = np.fft.ifft2(omega_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).real
    if not np.all(np.isfinite(out)):
        raise NumericsError("vorticity blew up (non-finite values after step)")
    return out


def _step(f: np.ndarray, cfg: SimConfig) -> np.ndarray:
    if cfg.dynamics == "diffusion":
        return step_diffusion_exact(f, cfg.nu, cfg.dt)
    return step_ns(f, cfg)


def simulate_trajectory(cfg: SimConfig, traj_index: int) -> Trajectory:
    """One trajectory: GRF start, then frames recorded every ``record_every`` steps."""
    state = grf_init(cfg, traj_index)
    frames = np.empty((cfg.frames_per_traj, cfg.size, cfg.size))
    frames[0] = state
    for i in range(1, cfg.frames_per_traj):
        for _ in range(cfg.record_every):
            state = _step(state, cfg)
        frames[i] = state
    return Trajectory(frames, cfg.frame_dt)


def generate_dataset(cfg: SimConfig, n_traj: int) -> list[Trajectory]:
    """Deterministic per seed; trajectory i is independent of n_traj."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    return [simulate_trajectory(cfg, i) for i in range(n_traj)]


class DiffusionOracle:
    """Exact diffusion propagator wrapped in the forecaster interface.

    Replays the generator's stepping (``substeps`` exact steps of ``dt`` on
    the last window frame), so its forecasts match recorded diffusion
    trajectories bit for bit. Used as the rotation-equivariant reference
    model in the symmetry harness.
    """

    def __init__(self, nu: float, dt: float, substeps: int = 1, window: int = 10):
        if window < 1 or substeps < 1:
            raise ValueError("window and substeps must be >= 1")
        self.nu = nu
        self.dt = dt
        self.substeps = substeps
        self.window = window

    @classmethod
    def from_config(cls, cfg: SimConfig, window: int = 10) -> "DiffusionOracle":
        if cfg.dynamics != "diffusion":
            raise ValueError("oracle only replays diffusion dynamics")
        return cls(cfg.nu, cfg.dt, cfg.record_every, window)

    def predict(self, window_fields: np.ndarray) -> np.ndarray:
        window_fields = np.asarray(window_fields, dtype=np.float64)
        if len(window_fields) != self.window:
            raise ValueError(
                f"expected window of {self.window} frames, got {len(window_fields)}"
            )
        state = window_fields[-1]
        for _ in range(self.substeps):
            state = step_diffusion_exact(state, self.nu, self.dt)
        return state
