import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from socialmae.mae import ModelConfig
from socialmae.scene import Scene, SynthConfig

settings.register_profile(
    "socialmae", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("socialmae")

torch.set_num_threads(1)


def make_scene(n=2, j=3, t=4, d=3, seed=0, **kwargs) -> Scene:
    rng = np.random.default_rng(seed)
    return Scene(
        trajectories=rng.normal(size=(n, j, t, d)),
        visibility=np.ones((n, j, t), dtype=bool),
        **kwargs,
    )


@pytest.fixture
def toy_cfg():
    return ModelConfig.toy()


@pytest.fixture
def tiny_cfg():
    # small enough for float64 finite differences over every parameter
    return ModelConfig.toy(
        enc_layers=1, enc_heads=1, enc_dim=8, dec_layers=1, dec_heads=1, dec_dim=12, pos_dim=4,
        num_frames=4, max_joints=3, max_persons=3, mlp_ratio=1,
    )


@pytest.fixture
def synth_cfg():
    return SynthConfig(num_persons=4, num_joints=5, num_frames=15, num_groups=2)


def experiment_doc(out_dir, task="group", epochs=5, **overrides) -> dict:
    """A desk-scale experiment config as the JSON document the CLI would read."""
    frames = 10 if task == "forecast" else 6
    synth = {"num_persons": 4, "num_joints": 3, "num_frames": frames, "num_groups": 2}
    doc = {
        "task": task,
        "seed": 0,
        "out_dir": str(out_dir),
        "history_frames": 6,
        "horizon": 4,
        "batch_size": 4,
        "model": {
            "enc_layers": 2, "enc_heads": 2, "enc_dim": 16, "dec_layers": 1, "dec_heads": 2,
            "dec_dim": 12, "pos_dim": 4, "num_frames": 6, "max_joints": 4, "max_persons": 5,
            "mlp_ratio": 1, "pretrain_epochs": epochs, "finetune_epochs": epochs,
            "pretrain_lr": 1e-3, "finetune_lr": 1e-3,
        },
        "train_data": {"synth": synth, "num_scenes": 8},
        "eval_data": {"synth": synth, "num_scenes": 4},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return doc
