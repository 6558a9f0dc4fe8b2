"""Multi-person motion scenes: validation, JSON I/O, centering, padding and synthesis.

Arrays are stored person-major as ``[N, J, T, coord_dim]``. The on-disk JSON
format stores each person's trajectory frame-major (``T x J x coord_dim``).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DegenerateInputError, SceneFormatError, SceneValidationError


@dataclass(frozen=True)
class Scene:
    trajectories: np.ndarray  # [N, J, T, D]
    visibility: np.ndarray  # [N, J, T] bool
    pelvis_index: int = 0
    fps: float = 15.0
    person_ids: tuple[str, ...] = ()
    group_labels: tuple[tuple[int, ...], ...] | None = None
    pose_actions: np.ndarray | None = None  # [N] int
    interaction_actions: np.ndarray | None = None  # [N, I] bool
    padded: np.ndarray | None = None  # [N] bool, True for persons added by pad_scene

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64)
        vis = np.asarray(self.visibility, dtype=bool)
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "visibility", vis)
        if traj.ndim != 4:
            raise SceneValidationError(f"trajectories must be 4-D [N, J, T, D], got shape {traj.shape}")
        n, j, t, d = traj.shape
        if not self.person_ids:
            object.__setattr__(self, "person_ids", tuple(str(i) for i in range(n)))
        else:
            object.__setattr__(self, "person_ids", tuple(str(p) for p in self.person_ids))
        if self.padded is None:
            object.__setattr__(self, "padded", np.zeros(n, dtype=bool))
        else:
            object.__setattr__(self, "padded", np.asarray(self.padded, dtype=bool))
        if self.pose_actions is not None:
            object.__setattr__(self, "pose_actions", np.asarray(self.pose_actions, dtype=np.int64))
        if self.interaction_actions is not None:
            object.__setattr__(self, "interaction_actions", np.asarray(self.interaction_actions, dtype=bool))
        if self.group_labels is not None:
            object.__setattr__(
                self, "group_labels", tuple(tuple(int(i) for i in g) for g in self.group_labels)
            )
        self.validate()

    @property
    def num_persons(self) -> int:
        return self.trajectories.shape[0]

    @property
    def num_joints(self) -> int:
        return self.trajectories.shape[1]

    @property
    def num_frames(self) -> int:
        return self.trajectories.shape[2]

    @property
    def coord_dim(self) -> int:
        return self.trajectories.shape[3]

    def validate(self) -> None:
        n, j, t, d = self.trajectories.shape
        if n < 1 or j < 1 or t < 1:
            raise SceneValidationError(f"scene dimensions must be >= 1, got N={n} J={j} T={t}")
        if d not in (2, 3):
            raise SceneValidationError(f"coord_dim must be 2 or 3, got {d}")
        if self.visibility.shape != (n, j, t):
            raise SceneValidationError(f"visibility shape {self.visibility.shape} != {(n, j, t)}")
        if not np.all(np.isfinite(self.trajectories)):
            raise SceneValidationError("trajectories contain non-finite values")
        if np.any(self.trajectories[~self.visibility] != 0.0):
            raise SceneValidationError("invisible entries must have zero coordinates (padding convention)")
        if not 0 <= self.pelvis_index < j:
            raise SceneValidationError(f"pelvis_index {self.pelvis_index} outside [0, {j})")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise SceneValidationError(f"fps must be a positive finite number, got {self.fps}")
        if len(self.person_ids) != n:
            raise SceneValidationError(f"{len(self.person_ids)} person ids for {n} persons")
        if self.padded.shape != (n,):
            raise SceneValidationError(f"padded flags shape {self.padded.shape} != ({n},)")
        if self.group_labels is not None:
            seen = [g for group in self.group_labels for g in group]
            if any(len(g) == 0 for g in self.group_labels):
                raise SceneValidationError("group_labels contains an empty group")
            if sorted(seen) != list(range(n)):
                raise SceneValidationError("group_labels must partition persons 0..N-1 exactly")
        if self.pose_actions is not None:
            if self.pose_actions.shape != (n,):
                raise SceneValidationError(f"pose_actions shape {self.pose_actions.shape} != ({n},)")
            if np.any(self.pose_actions < 0):
                raise SceneValidationError("pose_actions must be non-negative")
        if self.interaction_actions is not None:
            if self.interaction_actions.ndim != 2 or self.interaction_actions.shape[0] != n:
                raise SceneValidationError(
                    f"interaction_actions shape {self.interaction_actions.shape} is not [N={n}, I]"
                )

    def replace(self, **changes: Any) -> "Scene":
        return dataclasses.replace(self, **changes)

    def window(self, start: int, stop: int) -> "Scene":
        """Frames ``start:stop`` with labels carried over."""
        return self.replace(
            trajectories=self.trajectories[:, :, start:stop].copy(),
            visibility=self.visibility[:, :, start:stop].copy(),
        )

    def membership_matrix(self) -> np.ndarray:
        """Binary co-membership matrix of ``group_labels`` (unit diagonal)."""
        if self.group_labels is None:
            raise SceneValidationError("scene has no group_labels")
        n = self.num_persons
        a = np.zeros((n, n))
        for g in self.group_labels:
            idx = np.asarray(g)
            a[np.ix_(idx, idx)] = 1.0
        return a

    def real_groups(self) -> list[list[int]]:
        """Ground-truth groups restricted to non-padded persons."""
        if self.group_labels is None:
            raise SceneValidationError("scene has no group_labels")
        keep = ~self.padded
        groups = [[i for i in g if keep[i]] for g in self.group_labels]
        return [sorted(g) for g in groups if g]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return scene_to_dict(self) == scene_to_dict(other) and np.array_equal(self.padded, other.padded)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CenteredScene:
    scene: Scene
    global_offsets: np.ndarray  # [N, D]

    def restore(self) -> Scene:
        """Undo centering (adds the offsets back on visible entries)."""
        s = self.scene
        traj = s.trajectories + self.global_offsets[:, None, None, :]
        traj = np.where(s.visibility[..., None], traj, 0.0)
        return s.replace(trajectories=traj)


# --------------------------------------------------------------------------- I/O


def scene_to_dict(scene: Scene) -> dict:
    doc: dict[str, Any] = {
        "coord_dim": scene.coord_dim,
        "fps": float(scene.fps),
        "pelvis_index": int(scene.pelvis_index),
        "persons": [
            {
                "id": pid,
                "trajectory": scene.trajectories[n].transpose(1, 0, 2).tolist(),
                "visibility": scene.visibility[n].T.astype(int).tolist(),
            }
            for n, pid in enumerate(scene.person_ids)
        ],
    }
    if scene.group_labels is not None:
        doc["groups"] = [list(g) for g in scene.group_labels]
    if scene.pose_actions is not None:
        doc["pose_actions"] = scene.pose_actions.tolist()
    if scene.interaction_actions is not None:
        doc["interaction_actions"] = scene.interaction_actions.astype(int).tolist()
    if scene.padded.any():
        doc["padded"] = scene.padded.astype(int).tolist()
    return doc


def _field(doc: dict, key: str, kind: type | tuple[type, ...]):
    if key not in doc:
        raise SceneFormatError(f"missing field '{key}'")
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise SceneFormatError(f"field '{key}' has wrong type {type(value).__name__}")
    return value


def _array(value, key: str, dtype) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"field '{key}' is not a rectangular numeric array: {exc}") from None
    return arr


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict):
        raise SceneFormatError("scene document must be a JSON object")
    coord_dim = _field(doc, "coord_dim", int)
    fps = float(_field(doc, "fps", (int, float)))
    pelvis = _field(doc, "pelvis_index", int)
    persons = _field(doc, "persons", list)
    if not persons:
        raise SceneFormatError("field 'persons' is empty")
    trajs, vis, ids = [], [], []
    for n, person in enumerate(persons):
        if not isinstance(person, dict):
            raise SceneFormatError(f"field 'persons[{n}]' must be an object")
        ids.append(str(_field(person, "id", (str, int))))
        t = _array(_field(person, "trajectory", list), f"persons[{n}].trajectory", np.float64)
        v = _array(_field(person, "visibility", list), f"persons[{n}].visibility", np.int64)
        if t.ndim != 3 or t.shape[2] != coord_dim:
            raise SceneFormatError(f"field 'persons[{n}].trajectory' must be T x J x {coord_dim}, got {t.shape}")
        if v.shape != t.shape[:2]:
            raise SceneFormatError(f"field 'persons[{n}].visibility' shape {v.shape} != {t.shape[:2]}")
        if not np.isin(v, (0, 1)).all():
            raise SceneFormatError(f"field 'persons[{n}].visibility' must hold 0/1 values")
        trajs.append(t.transpose(1, 0, 2))
        vis.append(v.T.astype(bool))
    if len({t.shape for t in trajs}) != 1:
        raise SceneFormatError("field 'persons' has inconsistent trajectory shapes across persons")

    groups = None
    if "groups" in doc:
        groups = _field(doc, "groups", list)
        if not all(isinstance(g, list) and all(isinstance(i, int) for i in g) for g in groups):
            raise SceneFormatError("field 'groups' must be a list of integer lists")
    pose = None
    if "pose_actions" in doc:
        pose = _array(_field(doc, "pose_actions", list), "pose_actions", np.int64)
    inter = None
    if "interaction_actions" in doc:
        inter = _array(_field(doc, "interaction_actions", list), "interaction_actions", np.int64)
        if inter.ndim != 2 or not np.isin(inter, (0, 1)).all():
            raise SceneFormatError("field 'interaction_actions' must be an N x I array of 0/1")
    padded = None
    if "padded" in doc:
        padded = _array(_field(doc, "padded", list), "padded", np.int64).astype(bool)

    return Scene(
        trajectories=np.stack(trajs),
        visibility=np.stack(vis),
        pelvis_index=pelvis,
        fps=fps,
        person_ids=tuple(ids),
        group_labels=groups,
        pose_actions=pose,
        interaction_actions=inter,
        padded=padded,
    )


def load_scene(path: str | Path) -> Scene:
    """Read and validate a scene JSON document."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON in {path}: {exc}") from None
    return scene_from_dict(doc)


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)), encoding="utf-8")


# --------------------------------------------------------------------------- transforms


def center_scene(scene: Scene) -> CenteredScene:
    """Subtract each person's pelvis position at their last visible pelvis frame.

    Padded persons keep zero offsets. Raises DegenerateInputError for a real
    person whose pelvis is never visible.
    """
    n, _, t, d = scene.trajectories.shape
    offsets = np.zeros((n, d))
    pelvis_vis = scene.visibility[:, scene.pelvis_index, :]
    for i in range(n):
        if scene.padded[i]:
            continue
        frames = np.flatnonzero(pelvis_vis[i])
        if frames.size == 0:
            raise DegenerateInputError(f"person {i} ({scene.person_ids[i]}) has no visible pelvis frame")
        offsets[i] = scene.trajectories[i, scene.pelvis_index, frames[-1]]
    centered = np.where(scene.visibility[..., None], scene.trajectories - offsets[:, None, None, :], 0.0)
    return CenteredScene(scene=scene.replace(trajectories=centered), global_offsets=offsets)


def pad_scene(scene: Scene, target_n: int, target_j: int, target_t: int) -> Scene:
    """Append invisible, zero-valued persons/joints/frames up to the target sizes."""
    n, j, t, d = scene.trajectories.shape
    if target_n < n or target_j < j or target_t < t:
        raise ValueError(f"pad targets {(target_n, target_j, target_t)} smaller than scene dims {(n, j, t)}")
    if (target_n, target_j, target_t) == (n, j, t):
        return scene
    traj = np.zeros((target_n, target_j, target_t, d))
    traj[:n, :j, :t] = scene.trajectories
    vis = np.zeros((target_n, target_j, target_t), dtype=bool)
    vis[:n, :j, :t] = scene.visibility
    extra = target_n - n
    groups = None
    if scene.group_labels is not None:
        groups = tuple(scene.group_labels) + tuple((i,) for i in range(n, target_n))
    pose = None
    if scene.pose_actions is not None:
        pose = np.concatenate([scene.pose_actions, np.zeros(extra, dtype=np.int64)])
    inter = None
    if scene.interaction_actions is not None:
        inter = np.concatenate(
            [scene.interaction_actions, np.zeros((extra, scene.interaction_actions.shape[1]), dtype=bool)]
        )
    return Scene(
        trajectories=traj,
        visibility=vis,
        pelvis_index=scene.pelvis_index,
        fps=scene.fps,
        person_ids=scene.person_ids + tuple(f"pad-{i}" for i in range(n, target_n)),
        group_labels=groups,
        pose_actions=pose,
        interaction_actions=inter,
        padded=np.concatenate([scene.padded, np.ones(extra, dtype=bool)]),
    )


# --------------------------------------------------------------------------- synthesis


@dataclass
class SynthConfig:
    """Parameters of the synthetic labeled-scene generator.

    Persons of one group share a base velocity and heading; each non-pelvis
    joint oscillates sinusoidally at a person-specific gait frequency whose
    band is the pose-action label. Interaction label ``k`` marks a person
    having a groupmate whose mean pelvis distance falls in proximity bin ``k``.
    """

    num_persons: int = 4
    num_joints: int = 5
    num_frames: int = 15
    coord_dim: int = 3
    num_groups: int = 2
    noise: float = 0.0
    fps: float = 15.0
    speed: tuple[float, float] = (0.3, 1.5)
    limb_amplitude: float = 0.15
    body_scale: float = 0.5
    group_spacing: float = 6.0
    group_radius: float = 0.8
    num_pose_classes: int = 10
    num_interactions: int = 14
    freq_band: tuple[float, float] = (0.5, 3.5)
    proximity_bin: float = 0.25

    def __post_init__(self):
        if isinstance(self.speed, list):
            self.speed = tuple(self.speed)
        if isinstance(self.freq_band, list):
            self.freq_band = tuple(self.freq_band)


def synth_scene(config: SynthConfig, seed: int) -> Scene:
    """Deterministic labeled scene; a pure function of ``(config, seed)``."""
    c = config
    if c.num_groups < 1 or c.num_groups > c.num_persons:
        raise ValueError(f"num_groups={c.num_groups} must be in [1, num_persons={c.num_persons}]")
    if c.coord_dim not in (2, 3) or c.num_joints < 1 or c.num_frames < 1:
        raise ValueError("invalid scene dimensions in SynthConfig")
    rng = np.random.default_rng(seed)
    n, j, t, d, g = c.num_persons, c.num_joints, c.num_frames, c.coord_dim, c.num_groups

    # first g persons seed one group each; the rest join uniformly at random
    assign = np.concatenate([np.arange(g), rng.integers(0, g, size=n - g)])
    assign = assign[rng.permutation(n)]
    groups = [tuple(int(i) for i in np.flatnonzero(assign == k)) for k in range(g)]

    headings = 2 * np.pi * (np.arange(g) + rng.uniform(0.1, 0.9, size=g)) / g
    speeds = rng.uniform(*c.speed, size=g)
    group_angle = rng.uniform(0, 2 * np.pi)
    centers = np.zeros((g, d))
    for k in range(g):
        ang = group_angle + 2 * np.pi * k / g
        centers[k, :2] = c.group_spacing * (1 + 0.1 * k) * np.array([np.cos(ang), np.sin(ang)])

    velocity = np.zeros((g, d))
    velocity[:, 0] = speeds * np.cos(headings)
    velocity[:, 1] = speeds * np.sin(headings)

    lo, hi = c.freq_band
    width = (hi - lo) / c.num_pose_classes
    pose = rng.integers(0, c.num_pose_classes, size=n)
    freqs = lo + width * (pose + rng.uniform(0.15, 0.85, size=n))

    body = rng.normal(scale=c.body_scale, size=(n, j, d))
    body[:, 0] = 0.0
    swing = rng.normal(size=(n, j, d))
    swing /= np.linalg.norm(swing, axis=-1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, size=(n, j))

    time = np.arange(t) / c.fps
    traj = np.zeros((n, j, t, d))
    for i in range(n):
        k = assign[i]
        ang = rng.uniform(0, 2 * np.pi)
        start = centers[k].copy()
        start[:2] += c.group_radius * rng.uniform(0.3, 1.0) * np.array([np.cos(ang), np.sin(ang)])
        pelvis = start[None, :] + time[:, None] * velocity[k][None, :]
        osc = c.limb_amplitude * np.sin(2 * np.pi * freqs[i] * time[None, :] + phase[i][:, None])
        osc[0] = 0.0
        traj[i] = pelvis[None] + body[i][:, None, :] + osc[..., None] * swing[i][:, None, :]
    if c.noise > 0:
        traj = traj + rng.normal(scale=c.noise, size=traj.shape)

    pelvis_xy = traj[:, 0]
    inter = np.zeros((n, c.num_interactions), dtype=bool)
    for group in groups:
        for a in group:
            for b in group:
                if a == b:
                    continue
                dist = np.linalg.norm(pelvis_xy[a] - pelvis_xy[b], axis=-1).mean()
                k = int(dist // c.proximity_bin)
                inter[a, min(k, c.num_interactions - 1)] = True

    return Scene(
        trajectories=traj,
        visibility=np.ones((n, j, t), dtype=bool),
        pelvis_index=0,
        fps=c.fps,
        person_ids=tuple(f"p{i}" for i in range(n)),
        group_labels=tuple(groups),
        pose_actions=pose,
        interaction_actions=inter,
    )


def synth_config_from_dict(doc: dict) -> SynthConfig:
    names = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown synth parameters: {sorted(unknown)}")
    return SynthConfig(**doc)


def common_dims(scenes: Sequence[Scene]) -> tuple[int, int, int]:
    return (
        max(s.num_persons for s in scenes),
        max(s.num_joints for s in scenes),
        max(s.num_frames for s in scenes),
    )
