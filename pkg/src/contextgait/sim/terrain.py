"""Procedural terrain heightfields and synthetic exteroception."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TERRAIN_KINDS = ("flat", "box", "rough", "slope_up", "slope_down")

BOX_MAX_HEIGHT = 0.25     # m at difficulty 1
ROUGH_MAX_AMPLITUDE = 0.12  # m at difficulty 1
SLOPE_MAX_GRADE = np.deg2rad(20.0)  # at difficulty 1


@dataclass
class TerrainSpec:
    kind: str = "flat"
    difficulty: float = 0.5
    seed: int = 0
    extent: tuple = (12.0, 12.0)   # m (x, y), centered on the origin
    resolution: float = 0.05       # m per cell

    def validate(self) -> None:
        if self.kind not in TERRAIN_KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if not (0.0 <= self.difficulty <= 1.0):
            raise ValueError("difficulty must be in [0, 1]")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")


class Heightfield:
    """Regular grid of heights with bilinear point queries."""

    def __init__(self, heights: np.ndarray, extent: tuple, resolution: float):
        self.heights = np.asarray(heights, float)
        self.extent = tuple(extent)
        self.resolution = float(resolution)
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heightfield contains non-finite values")

    def _grid_coords(self, x, y):
        gx = (np.asarray(x, float) + self.extent[0] / 2) / self.resolution
        gy = (np.asarray(y, float) + self.extent[1] / 2) / self.resolution
        gx = np.clip(gx, 0, self.heights.shape[1] - 1.001)
        gy = np.clip(gy, 0, self.heights.shape[0] - 1.001)
        return gx, gy

    def sample(self, x, y):
        """Bilinear height at world (x, y); clamped at the borders."""
        gx, gy = self._grid_coords(x, y)
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        fx, fy = gx - x0, gy - y0
        h = self.heights
        return ((1 - fy) * ((1 - fx) * h[y0, x0] + fx * h[y0, x0 + 1])
                + fy * ((1 - fx) * h[y0 + 1, x0] + fx * h[y0 + 1, x0 + 1]))

    def local_roughness(self, x: float, y: float, window: float = 1.2) -> float:
        """Height standard deviation in a square window around (x, y)."""
        n = max(3, int(window / 0.15))
        xs = np.linspace(x - window / 2, x + window / 2, n)
        ys = np.linspace(y - window / 2, y + window / 2, n)
        gx, gy = np.meshgrid(xs, ys)
        return float(self.sample(gx.ravel(), gy.ravel()).std())

    def mesh_features(self, x: float, y: float, n_forward: int = 16,
                      n_lateral: int = 8, x_range: tuple = (0.3, 2.3),
                      y_half: float = 0.8) -> np.ndarray:
        """Body-frame height samples ahead of the robot (8 x 16 -> 128)."""
        xs = np.linspace(x + x_range[0], x + x_range[1], n_forward)
        ys = np.linspace(y - y_half, y + y_half, n_lateral)
        gx, gy = np.meshgrid(xs, ys)
        base = self.sample(x, y)
        return (self.sample(gx.ravel(), gy.ravel()) - base).astype(float)

    def synth_rgbd(self, x: float, y: float, shape: tuple = (4, 36, 64),
                   cam_height: float = 0.6, d_range: tuple = (0.5, 6.0)) -> np.ndarray:
        """Heightfield-derived depth image plus a flat-color RGB fill."""
        _, H, W = shape
        fwd = np.linspace(d_range[1], d_range[0], H)  # top rows look far
        lat = np.linspace(-2.0, 2.0, W)
        gx, gy = np.meshgrid(x + fwd, y + lat, indexing="ij")
        h = self.sample(gx.ravel(), gy.ravel()).reshape(H, W)
        z_cam = self.sample(x, y) + cam_height
        depth = np.sqrt(fwd[:, None] ** 2 + lat[None, :] ** 2 + (z_cam - h) ** 2)
        img = np.empty(shape)
        img[:3] = 0.5
        img[3] = depth
        return img


def generate_terrain(spec: TerrainSpec) -> Heightfield:
    """Deterministic heightfield from a terrain spec and seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    nx = int(round(spec.extent[0] / spec.resolution)) + 1
    ny = int(round(spec.extent[1] / spec.resolution)) + 1

    if spec.kind == "flat":
        heights = np.zeros((ny, nx))
    elif spec.kind == "rough":
        amp = ROUGH_MAX_AMPLITUDE * spec.difficulty
        heights = rng.uniform(-amp, amp, size=(ny, nx))
    elif spec.kind == "box":
        cell = max(1, int(round(0.8 / spec.resolution)))
        cy, cx = ny // cell + 2, nx // cell + 2
        boxes = rng.uniform(0.0, BOX_MAX_HEIGHT * spec.difficulty, size=(cy, cx))
        heights = np.kron(boxes, np.ones((cell, cell)))[:ny, :nx]
    else:  # slopes
        grade = np.tan(SLOPE_MAX_GRADE * spec.difficulty)
        sign = 1.0 if spec.kind == "slope_up" else -1.0
        xs = np.linspace(0.0, spec.extent[0], nx)
        heights = np.tile(sign * grade * xs, (ny, 1))
    return Heightfield(heights, spec.extent, spec.resolution)
