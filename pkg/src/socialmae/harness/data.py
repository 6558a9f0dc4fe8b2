"""Dataset directories: synthesis, manifests, loading and task windows."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Sequence

from ..errors import SceneValidationError
from ..scene import Scene, SynthConfig, load_scene, pad_scene, save_scene, synth_scene
from .config import DataSource

MANIFEST = "manifest.json"


def scene_filename(index: int) -> str:
    return f"scene_{index:05d}.json"


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def synth_scenes(config: SynthConfig, num_scenes: int, seed: int) -> list[Scene]:
    return [synth_scene(config, seed + i) for i in range(num_scenes)]


def write_dataset(out_dir: str | Path, config: SynthConfig, num_scenes: int, seed: int) -> Path:
    """Write ``num_scenes`` scene files plus a manifest; reruns are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, scene in enumerate(synth_scenes(config, num_scenes, seed)):
        path = out / scene_filename(i)
        save_scene(scene, path)
        files[path.name] = sha256(path)
    manifest = {
        "generator": dataclasses.asdict(config),
        "seed": seed,
        "num_scenes": num_scenes,
        "files": files,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return out


def verify_dataset(out_dir: str | Path) -> list[str]:
    """Problems found when re-synthesising from the manifest and comparing digests (empty = OK)."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    config = SynthConfig(**manifest["generator"])
    problems = []
    for i, scene in enumerate(synth_scenes(config, manifest["num_scenes"], manifest["seed"])):
        name = scene_filename(i)
        path = out / name
        if not path.exists():
            problems.append(f"missing {name}")
            continue
        digest = sha256(path)
        if digest != manifest["files"].get(name):
            problems.append(f"{name}: digest differs from manifest")
        if load_scene(path) != scene:
            problems.append(f"{name}: content differs from regenerated scene")
    return problems


def load_dataset(path: str | Path) -> list[Scene]:
    root = Path(path)
    files = sorted(root.glob("scene_*.json"))
    if not files:
        raise FileNotFoundError(f"no scene_*.json files in {root}")
    return [load_scene(f) for f in files]


def resolve(source: DataSource, default_seed: int) -> list[Scene]:
    """Materialise a data source; ``fraction`` keeps the leading share of scenes."""
    if source.path is not None:
        scenes = load_dataset(source.path)
    else:
        seed = default_seed if source.seed is None else source.seed
        scenes = synth_scenes(source.synth, source.num_scenes, seed)
    keep = max(1, round(source.fraction * len(scenes)))
    return scenes[:keep]


def input_window(scene: Scene, frames: int) -> Scene:
    """First ``frames`` frames, zero-padded (invisible) when the scene is shorter."""
    if scene.num_frames >= frames:
        return scene.window(0, frames)
    return pad_scene(scene, scene.num_persons, scene.num_joints, frames)


def forecast_windows(scene: Scene, history: int, horizon: int) -> tuple[Scene, Scene]:
    if scene.num_frames < history + horizon:
        raise SceneValidationError(
            f"forecasting needs {history + horizon} frames, scene has {scene.num_frames}"
        )
    return scene.window(0, history), scene.window(history, history + horizon)


def check_labels(scenes: Sequence[Scene], task: str, coord_dim: int, num_pose: int = 10, num_interactions: int = 14):
    for i, s in enumerate(scenes):
        if s.coord_dim != coord_dim:
            raise SceneValidationError(f"scene {i} has coord_dim {s.coord_dim}, model expects {coord_dim}")
        if task == "group" and s.group_labels is None:
            raise SceneValidationError(f"scene {i} lacks group labels required by the group task")
        if task == "action":
            if s.pose_actions is None or s.interaction_actions is None:
                raise SceneValidationError(f"scene {i} lacks action labels required by the action task")
            if s.pose_actions.max(initial=0) >= num_pose:
                raise SceneValidationError(f"scene {i} has pose labels outside [0, {num_pose})")
            if s.interaction_actions.shape[1] != num_interactions:
                raise SceneValidationError(
                    f"scene {i} has {s.interaction_actions.shape[1]} interaction classes, expected {num_interactions}"
                )
