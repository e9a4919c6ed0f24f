"""Uniform rectangular arrays: element pattern, steering vectors, beam codebooks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

GAIN_FLOOR_DB = -200.0


@dataclass(frozen=True)
class ArrayConfig:
    """A planar array panel (rows x cols) with a rigid boresight rotation."""

    rows: int = 8
    cols: int = 8
    element_spacing_wavelengths: float = 0.5
    boresight_azimuth: float = 0.0
    downtilt: float = math.radians(12.0)
    max_element_gain_dbi: float = 8.0
    pattern: str = "tri3d"  # "tri3d" or "omni"

    def __post_init__(self):
        if self.rows * self.cols < 1:
            raise ValueError("array must have at least one element")
        if self.element_spacing_wavelengths <= 0:
            raise ValueError("element spacing must be positive")
        if self.pattern not in ("tri3d", "omni"):
            raise ValueError(f"unknown element pattern {self.pattern!r}")
        if self.pattern == "omni":
            object.__setattr__(self, "max_element_gain_dbi", 0.0)

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


def element_gain_db(pattern: str, azimuth_off: float, elevation_off: float,
                    max_gain_dbi: float = 8.0) -> float:
    """Directional element gain in dB at the given angular offsets (rad).

    The directional pattern combines parabolic 65-degree cuts in azimuth and
    elevation, each floored at -30 dB, with the combined rolloff also capped
    at 30 dB below peak. "omni" is flat 0 dB.
    """
    if pattern == "omni":
        return 0.0
    az = math.degrees(azimuth_off)
    el = math.degrees(elevation_off)
    a_v = -min(12.0 * (el / 65.0) ** 2, 30.0)
    a_h = -min(12.0 * (az / 65.0) ** 2, 30.0)
    return max_gain_dbi - min(-(a_v + a_h), 30.0)


def _panel_rotation(config: ArrayConfig) -> np.ndarray:
    """Rotation matrix mapping panel-local coordinates to global ones."""
    ca, sa = math.cos(config.boresight_azimuth), math.sin(config.boresight_azimuth)
    ct, st = math.cos(config.downtilt), math.sin(config.downtilt)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    # tilt about the panel's horizontal axis; positive tilt points boresight down
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    return rz @ ry


def local_angles(config: ArrayConfig, azimuth: float, elevation: float):
    """Map a global (azimuth, elevation) direction into panel-local offsets."""
    u = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    v = _panel_rotation(config).T @ u
    az_l = math.atan2(v[1], v[0])
    el_l = math.asin(max(-1.0, min(1.0, v[2])))
    return az_l, el_l


def array_response(config: ArrayConfig, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-magnitude steering vector of the panel toward a global direction.

    Element (m, n) gets phase 2*pi*spacing*(m*sin(el') + n*sin(az')*cos(el'))
    in panel-local angles; rows index elevation, columns azimuth.
    """
    az_l, el_l = local_angles(config, azimuth, elevation)
    m = np.arange(config.rows)[:, None]
    n = np.arange(config.cols)[None, :]
    s = config.element_spacing_wavelengths
    phase = 2.0 * math.pi * s * (m * math.sin(el_l) + n * math.sin(az_l) * math.cos(el_l))
    return np.exp(1j * phase).reshape(-1)


def element_gain_toward(config: ArrayConfig, azimuth: float, elevation: float) -> float:
    """Element gain (dB) of the panel toward a global direction."""
    az_l, el_l = local_angles(config, azimuth, elevation)
    return element_gain_db(config.pattern, az_l, el_l, config.max_element_gain_dbi)


@dataclass(frozen=True)
class BeamCodebook:
    """Immutable set of unit-norm beamforming weight vectors."""

    weights: np.ndarray  # (n_beams, n_elements), rows unit norm

    def __post_init__(self):
        w = np.asarray(self.weights)
        norms = np.linalg.norm(w, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("codebook weight vectors must be unit norm")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_beams(self) -> int:
        return self.weights.shape[0]

    def beam(self, beam_id: int) -> np.ndarray:
        return self.weights[beam_id]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["beam_id", "element", "re", "im"])
            for b in range(self.n_beams):
                for e in range(self.weights.shape[1]):
                    v = self.weights[b, e]
                    w.writerow([b, e, repr(v.real), repr(v.imag)])


def build_dft_codebook(config: ArrayConfig) -> BeamCodebook:
    """Critically sampled DFT codebook: rows*cols orthonormal beams.

    Beam (p, q) is the Kronecker product of the p-th row-axis and q-th
    column-axis DFT vectors, so beam_id = p * cols + q.
    """
    fr = np.exp(-2j * math.pi * np.outer(np.arange(config.rows), np.arange(config.rows))
                / config.rows) / math.sqrt(config.rows)
    fc = np.exp(-2j * math.pi * np.outer(np.arange(config.cols), np.arange(config.cols))
                / config.cols) / math.sqrt(config.cols)
    beams = np.stack([np.kron(fr[p], fc[q])
                      for p in range(config.rows) for q in range(config.cols)])
    return BeamCodebook(beams)


def beam_gain_db(weights: np.ndarray, channel: np.ndarray,
                 partner_weights: np.ndarray = None) -> float:
    """Beamforming gain in dB: |w^H h|^2, or |w_rx^H H w_tx|^2 double-ended.

    Zero inner products are floored at GAIN_FLOOR_DB.
    """
    w = np.asarray(weights)
    h = np.asarray(channel)
    if partner_weights is None:
        if h.ndim != 1 or w.shape != h.shape:
            raise ValueError(f"dimension mismatch: weights {w.shape} vs channel {h.shape}")
        amp = np.vdot(w, h)
    else:
        p = np.asarray(partner_weights)
        if h.ndim != 2 or h.shape[0] != w.shape[0] or h.shape[1] != p.shape[0]:
            raise ValueError(
                f"dimension mismatch: rx {w.shape}, channel {h.shape}, tx {p.shape}")
        amp = np.vdot(w, h @ p)
    power = float(np.abs(amp)) ** 2
    if power <= 0.0:
        return GAIN_FLOOR_DB
    return max(10.0 * math.log10(power), GAIN_FLOOR_DB)
