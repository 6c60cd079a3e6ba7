"""Synthetic geo-tagged scenes standing in for real image sequences.

A scene holds one observation vector per (pose, condition). Observations
come from a smooth seeded map of pose (random Fourier features of position
and heading direction) plus a constant per-condition offset and isotropic
noise, so ground-truth location is smoothly recoverable from the
observation alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .files import atomic_write_text

__all__ = [
    "ObservationMap",
    "Scene",
    "SceneConfig",
    "SceneFormatError",
    "generate_scene",
    "load_scene",
    "save_scene",
]

TRAJECTORIES = ("loop", "figure_eight", "random_walk")


class SceneFormatError(ValueError):
    """Raised when a scene file cannot be parsed."""


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic scene generator."""

    trajectory: str = "loop"
    n_poses: int = 200
    conditions: int = 2
    obs_dim: int = 32
    condition_offset_scale: float = 0.3
    noise_sigma: float = 0.02
    seed: int = 0
    extent: float = 15.0

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"trajectory must be one of {TRAJECTORIES}")
        if self.n_poses < 2:
            raise ValueError("n_poses must be at least 2")
        if self.conditions < 1:
            raise ValueError("conditions must be at least 1")
        if self.obs_dim < 4:
            raise ValueError("obs_dim must be at least 4")
        if self.condition_offset_scale < 0:
            raise ValueError("condition_offset_scale must be nonnegative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not self.extent > 0:
            raise ValueError("extent must be positive")


@dataclass
class Scene:
    """Images as parallel arrays: id, 2D location, heading, condition, observation."""

    ids: np.ndarray
    locations: np.ndarray
    headings: np.ndarray
    conditions: np.ndarray
    observations: np.ndarray

    @property
    def n_images(self) -> int:
        return self.ids.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def condition_tags(self) -> list[str]:
        seen: dict[str, None] = {}
        for tag in self.conditions:
            seen.setdefault(str(tag), None)
        return list(seen)

    def subset(self, indices) -> "Scene":
        idx = np.asarray(indices, dtype=int)
        return Scene(
            ids=self.ids[idx].copy(),
            locations=self.locations[idx].copy(),
            headings=self.headings[idx].copy(),
            conditions=self.conditions[idx].copy(),
            observations=self.observations[idx].copy(),
        )

    def subset_by_condition(self, tags: Sequence[str]) -> "Scene":
        wanted = set(str(t) for t in tags)
        unknown = wanted - set(self.condition_tags)
        if unknown:
            raise ValueError(f"unknown condition tags: {sorted(unknown)}")
        mask = np.array([str(c) in wanted for c in self.conditions])
        return self.subset(np.flatnonzero(mask))


@dataclass(frozen=True)
class ObservationMap:
    """Smooth seeded map from (location, heading) to observation space.

    Random Fourier features of ``(x, y, cos h, sin h)``. The positional
    lengthscale is tied to the trajectory extent so observations vary
    smoothly but distinguishably across the scene.
    """

    frequencies: np.ndarray
    phases: np.ndarray

    @classmethod
    def create(cls, obs_dim: int, extent: float, rng: np.random.Generator) -> "ObservationMap":
        # Positional lengthscales mimic real place recognition: three
        # quarters of the components carry fine detail that decorrelates
        # just beyond nearby-view range (extent/12..extent/9), the rest
        # carry coarse context at scene scale (extent..2*extent). Metric
        # information beyond the fine range is therefore sparse and
        # noisy; precise far-field structure has to be inferred, not read
        # off the observations.
        n_short = (3 * obs_dim) // 4
        short = (extent / 12.0) * np.power(12.0 / 9.0, rng.uniform(size=n_short))
        long = extent * np.power(2.0, rng.uniform(size=obs_dim - n_short))
        lengthscales = np.concatenate([short, long])
        freqs = rng.standard_normal((obs_dim, 4))
        freqs[:, :2] /= lengthscales[:, None]
        freqs[:, 2:] *= 0.5
        phases = rng.uniform(0.0, 2.0 * np.pi, size=obs_dim)
        return cls(frequencies=freqs, phases=phases)

    def __call__(self, locations, headings) -> np.ndarray:
        locs = np.atleast_2d(np.asarray(locations, dtype=float))
        h = np.atleast_1d(np.asarray(headings, dtype=float))
        z = np.column_stack([locs[:, 0], locs[:, 1], np.cos(h), np.sin(h)])
        d = self.frequencies.shape[0]
        return np.sqrt(2.0 / d) * np.cos(z @ self.frequencies.T + self.phases[None, :])


def _trajectory(config: SceneConfig, rng: np.random.Generator):
    """Pose locations and tangent headings along the configured path."""
    m = config.n_poses
    e = config.extent
    t = 2.0 * np.pi * np.arange(m) / m
    if config.trajectory == "loop":
        locs = np.column_stack([e * np.cos(t), e * np.sin(t)])
        headings = np.arctan2(np.cos(t), -np.sin(t))
    elif config.trajectory == "figure_eight":
        locs = np.column_stack([e * np.sin(t), e * np.sin(t) * np.cos(t)])
        headings = np.arctan2(e * np.cos(2.0 * t), e * np.cos(t))
    else:  # random_walk
        step = 2.0 * np.pi * e / m
        turns = rng.normal(0.0, 0.15, size=m)
        theta = np.cumsum(turns)
        steps = step * np.column_stack([np.cos(theta), np.sin(theta)])
        locs = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)[:-1]])
        headings = theta
    return locs, headings


def generate_scene(config: SceneConfig) -> Scene:
    """Deterministically generate a scene from its config.

    Per pose and condition the observation is ``phi(x, heading) +
    offset_c + eps`` with ``phi`` the seeded observation map, ``offset_c``
    a per-condition constant of norm ``condition_offset_scale`` and
    ``eps`` isotropic Gaussian noise of scale ``noise_sigma``.
    """
    rng = np.random.default_rng(config.seed)
    locs, headings = _trajectory(config, rng)
    omap = ObservationMap.create(config.obs_dim, config.extent, rng)
    offsets = rng.standard_normal((config.conditions, config.obs_dim))
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets = config.condition_offset_scale * offsets / np.maximum(norms, 1e-12)

    base = omap(locs, headings)
    blocks = []
    for c in range(config.conditions):
        noise = rng.normal(0.0, config.noise_sigma, size=base.shape)
        blocks.append(base + offsets[c][None, :] + noise)

    n_total = config.n_poses * config.conditions
    return Scene(
        ids=np.arange(n_total),
        locations=np.tile(locs, (config.conditions, 1)),
        headings=np.tile(headings, config.conditions),
        conditions=np.repeat([f"c{c}" for c in range(config.conditions)], config.n_poses),
        observations=np.vstack(blocks),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def save_scene(scene: Scene, path) -> None:
    """Write a scene file; floats keep full round-trip precision."""
    tags = scene.condition_tags
    lines = [
        "# mapfeat scene v1",
        f"obs_dim {scene.obs_dim}",
        "conditions " + " ".join(tags),
        f"n_images {scene.n_images}",
    ]
    for k in range(scene.n_images):
        obs = " ".join(_fmt(v) for v in scene.observations[k])
        lines.append(
            f"{int(scene.ids[k])} {_fmt(scene.locations[k, 0])} {_fmt(scene.locations[k, 1])} "
            f"{_fmt(scene.headings[k])} {scene.conditions[k]} {obs}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _header_value(lines: list[str], lineno: int, key: str) -> str:
    if lineno >= len(lines):
        raise SceneFormatError(f"line {lineno + 1}: missing '{key}' header")
    parts = lines[lineno].split(maxsplit=1)
    if len(parts) != 2 or parts[0] != key:
        raise SceneFormatError(f"line {lineno + 1}: expected '{key} <value>'")
    return parts[1]


def load_scene(path) -> Scene:
    """Load a scene file, validating structure and invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "# mapfeat scene v1":
        raise SceneFormatError("line 1: not a mapfeat scene file")
    try:
        obs_dim = int(_header_value(lines, 1, "obs_dim"))
    except ValueError as exc:
        raise SceneFormatError(f"line 2: bad obs_dim: {exc}") from None
    tags = _header_value(lines, 2, "conditions").split()
    try:
        n_images = int(_header_value(lines, 3, "n_images"))
    except ValueError as exc:
        raise SceneFormatError(f"line 4: bad n_images: {exc}") from None
    if n_images < 2:
        raise SceneFormatError("scene must contain at least 2 images")

    rows = lines[4:]
    if len(rows) != n_images:
        raise SceneFormatError(f"expected {n_images} image rows, found {len(rows)}")
    ids = np.empty(n_images, dtype=int)
    locations = np.empty((n_images, 2))
    headings = np.empty(n_images)
    conditions = np.empty(n_images, dtype=object)
    observations = np.empty((n_images, obs_dim))
    tag_set = set(tags)
    for k, row in enumerate(rows):
        lineno = k + 5
        parts = row.split()
        if len(parts) < 5:
            raise SceneFormatError(f"line {lineno}: truncated image record")
        try:
            img_id = int(parts[0])
        except ValueError:
            raise SceneFormatError(f"line {lineno}: bad image id {parts[0]!r}") from None
        if len(parts) != 5 + obs_dim:
            raise SceneFormatError(
                f"line {lineno}: image {img_id} has {len(parts) - 5} observation "
                f"values, expected {obs_dim}"
            )
        if parts[4] not in tag_set:
            raise SceneFormatError(
                f"line {lineno}: image {img_id} has unknown condition {parts[4]!r}"
            )
        try:
            ids[k] = img_id
            locations[k, 0] = float(parts[1])
            locations[k, 1] = float(parts[2])
            headings[k] = float(parts[3])
            conditions[k] = parts[4]
            observations[k] = [float(v) for v in parts[5:]]
        except ValueError as exc:
            raise SceneFormatError(f"line {lineno}: image {img_id}: {exc}") from None
    if len(np.unique(ids)) != n_images:
        raise SceneFormatError("image ids are not unique")
    if not (np.all(np.isfinite(locations)) and np.all(np.isfinite(observations))):
        raise SceneFormatError("scene contains non-finite values")
    return Scene(
        ids=ids,
        locations=locations,
        headings=headings,
        conditions=conditions,
        observations=observations,
    )
