import numpy as np
import pytest
import torch

from socialmae.errors import ConfigError, NumericError, TrainingError
from socialmae.mae import (
    Encoder,
    MAEDecoder,
    ModelConfig,
    PretrainModel,
    batch_reconstruction_loss,
    count_parameters,
    decode_reconstruct,
    encode,
    learning_rate,
    make_optimizer,
    pad_batch,
    prepare_scene,
    pretrain_step,
    reconstruction_loss,
    sample_plans,
)
from socialmae.scene import Scene, SynthConfig, center_scene, synth_scene
from socialmae.tokens import MaskPlan, apply_mask, sample_tube_mask

from conftest import make_scene
from oracles import model_fd_check


def test_full_scale_defaults():
    cfg = ModelConfig()
    assert (cfg.enc_layers, cfg.enc_heads, cfg.enc_dim) == (6, 8, 1024)
    assert (cfg.dec_layers, cfg.dec_heads, cfg.dec_dim) == (3, 4, 1032)
    assert cfg.mask_ratio == 0.5
    assert (cfg.pretrain_epochs, cfg.pretrain_lr) == (800, 1e-4)
    assert (cfg.finetune_epochs, cfg.finetune_lr) == (256, 1e-3)
    assert cfg.lr_decay_factor == 0.1
    assert cfg.loss_scope == "masked_only"


@pytest.mark.parametrize(
    "changes",
    [{"enc_dim": 10, "enc_heads": 4}, {"mask_ratio": 1.0}, {"enc_layers": 0}, {"loss_scope": "some"}, {"coord_dim": 4}],
)
def test_config_validation(changes):
    with pytest.raises(ConfigError):
        ModelConfig.toy(**changes)


def test_decay_step():
    lrs = [learning_rate(e, 800, 1e-4, 0.1, 0.75) for e in range(800)]
    assert lrs[599] == 1e-4
    assert lrs[600] == pytest.approx(1e-5)
    assert lrs[-1] == pytest.approx(0.1 * lrs[0])


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig.toy()], ids=["default", "toy"])
def test_encoder_larger_than_decoder(cfg):
    # parameter counts do not depend on values, so build on the meta device
    with torch.device("meta"):
        enc, dec = Encoder(cfg), MAEDecoder(cfg)
    assert count_parameters(enc) > count_parameters(dec)


def test_encode_shape_full_scale_layers():
    cfg = ModelConfig.toy(enc_layers=6)
    model = PretrainModel(cfg, seed=0)
    prepared = prepare_scene(make_scene(n=2, j=4, t=15))
    plan = MaskPlan(masked=tuple(range(4, 8)), visible=(0, 1, 2, 3), ratio=0.5)
    visible, _ = apply_mask(prepared.tokens, plan)
    latents = encode(visible, model)
    assert latents.layers.shape == (7, 4, cfg.enc_dim)
    assert latents.num_layers == 6


def test_encode_token_order_equivariant(toy_cfg):
    model = PretrainModel(toy_cfg, seed=1).eval()
    tokens = prepare_scene(make_scene(n=3, j=4, t=15)).tokens
    perm = np.random.default_rng(0).permutation(len(tokens))
    with torch.no_grad():
        a = encode(tokens, model).layers
        b = encode(tokens.take(perm), model).layers
        c = encode(tokens, model).layers
    torch.testing.assert_close(b, a[:, perm], atol=1e-5, rtol=1e-5)
    assert torch.equal(a, c)


def test_encode_non_finite_names_layer(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    with torch.no_grad():
        model.encoder.blocks[1].mlp[2].bias.fill_(float("inf"))
    tokens = prepare_scene(make_scene(n=1, j=2, t=15)).tokens
    with pytest.raises(NumericError, match="layer 2"):
        encode(tokens, model)


def test_decode_shape_and_plan_mismatch(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    prepared = prepare_scene(make_scene(n=2, j=3, t=15, d=3))
    plan = sample_tube_mask(6, 0.5, 0)
    visible, _ = apply_mask(prepared.tokens, plan)
    latents = encode(visible, model, plan.visible)
    out = decode_reconstruct(latents, plan, prepared.tokens, model)
    assert out.shape == (6, 3 * 15)
    assert torch.isfinite(out).all()
    other = sample_tube_mask(6, 0.5, 5)
    if other.visible != plan.visible:
        with pytest.raises(ValueError):
            decode_reconstruct(latents, other, prepared.tokens, model)


def _one_joint_scene():
    traj = np.zeros((1, 1, 2, 2))
    traj[0, 0, 0] = [1.0, 2.0]
    return center_scene(Scene(trajectories=traj, visibility=np.ones((1, 1, 2), bool)))


def test_reconstruction_loss_hand_values():
    c = _one_joint_scene()
    gt = torch.as_tensor(c.scene.trajectories.transpose(0, 1, 3, 2).reshape(1, 4))
    plan = MaskPlan(masked=(0,), visible=(), ratio=0.5)
    assert float(reconstruction_loss(gt.clone(), c, plan)) == 0.0
    assert float(reconstruction_loss(gt + 1, c, plan, "all_tokens")) == pytest.approx(1.0)
    pred = gt.clone()
    pred[0, 0] += 3.0  # x at frame 0
    pred[0, 2] += 4.0  # y at frame 0
    assert float(reconstruction_loss(pred, c, MaskPlan.unmasked(1), "all_tokens")) == pytest.approx(6.25)


def test_reconstruction_loss_ignores_invisible_frames():
    traj = np.zeros((1, 1, 3, 2))
    vis = np.array([[[True, True, False]]])
    c = center_scene(Scene(trajectories=traj, visibility=vis))
    pred = torch.zeros(1, 6, dtype=torch.float64)
    pred[0, 2] = 100.0  # x at the invisible frame
    pred[0, 5] = 100.0
    assert float(reconstruction_loss(pred, c, MaskPlan.unmasked(1), "all_tokens")) == 0.0


def test_masked_only_scope_excludes_visible_tokens(toy_cfg):
    c = center_scene(make_scene(n=1, j=2, t=3, d=2))
    gt = torch.as_tensor(c.scene.trajectories.transpose(0, 1, 3, 2).reshape(2, 6))
    pred = gt.clone()
    pred[1] += 2.0
    plan = MaskPlan(masked=(0,), visible=(1,), ratio=0.5)
    assert float(reconstruction_loss(pred, c, plan, "masked_only")) == 0.0
    assert float(reconstruction_loss(pred, c, plan, "all_tokens")) == pytest.approx(2.0)


def test_mask_token_receives_gradient(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    prepared = [prepare_scene(make_scene(n=2, j=3, t=15))]
    plans = sample_plans(prepared, 0.5, seed=0)
    loss = batch_reconstruction_loss(model, prepared, plans, "masked_only")
    loss.backward()
    assert model.mae_decoder.mask_token.grad.abs().sum() > 0

    # finite-difference probe along the gradient direction agrees in sign and size
    g = model.mae_decoder.mask_token.grad.clone()
    eps = 1e-3
    with torch.no_grad():
        model.mae_decoder.mask_token += eps * g / g.norm()
        up = batch_reconstruction_loss(model, prepared, plans, "masked_only")
        model.mae_decoder.mask_token -= 2 * eps * g / g.norm()
        down = batch_reconstruction_loss(model, prepared, plans, "masked_only")
    assert float((up - down) / (2 * eps)) == pytest.approx(float(g.norm()), rel=1e-2)


def test_nan_poisoned_masked_content_never_reaches_loss(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    prepared = prepare_scene(make_scene(n=2, j=4, t=15))
    for seed in range(10):
        plan = sample_tube_mask(len(prepared.tokens), 0.5, seed)
        content = prepared.tokens.content.copy()
        content[list(plan.masked)] = np.nan
        poisoned = type(prepared)(
            centered=prepared.centered,
            tokens=type(prepared.tokens)(**{**prepared.tokens.__dict__, "content": content}),
        )
        for scope in ("masked_only", "all_tokens"):
            loss = batch_reconstruction_loss(model, [poisoned], [plan], scope)
            assert torch.isfinite(loss)


def test_zero_learning_rate_leaves_params(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    opt = make_optimizer(model, 0.0)
    pretrain_step(model, opt, [make_scene(n=2, j=3, t=15)], seed=0)
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_identical_seeds_identical_curves(toy_cfg):
    scenes = [synth_scene(SynthConfig(), s) for s in range(2)]

    def curve():
        model = PretrainModel(toy_cfg, seed=3)
        opt = make_optimizer(model, 1e-3)
        return [pretrain_step(model, opt, scenes, seed=9, path=(i,)) for i in range(5)]

    assert curve() == curve()


def test_divergence_raises(toy_cfg):
    model = PretrainModel(toy_cfg, seed=0)
    with torch.no_grad():
        model.mae_decoder.head.bias.fill_(float("nan"))
    with pytest.raises(TrainingError):
        pretrain_step(model, make_optimizer(model, 1e-3), [make_scene(n=2, j=3, t=15)], seed=0)


def test_pretrain_overfits_fixed_batch(toy_cfg):
    # fixed scenes and fixed step seed, hence a fixed mask plan
    scenes = [synth_scene(SynthConfig(), s) for s in range(2)]
    model = PretrainModel(toy_cfg, seed=0)
    opt = make_optimizer(model, 1e-3)
    losses = [pretrain_step(model, opt, scenes, seed=0) for _ in range(200)]
    assert losses[-1] < 0.1 * losses[0]


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("j", [2, 3, 4])
@pytest.mark.parametrize("t", [4, 15])
@pytest.mark.parametrize("d", [2, 3])
def test_shape_sweep(n, j, t, d):
    cfg = ModelConfig.toy(num_frames=t, coord_dim=d, enc_dim=16, dec_dim=16, enc_heads=2, dec_heads=2)
    model = PretrainModel(cfg, seed=0)
    prepared = prepare_scene(make_scene(n=n, j=j, t=t, d=d))
    k = n * j
    plan = sample_tube_mask(k, 0.5, 0)
    visible, _ = apply_mask(prepared.tokens, plan)
    latents = encode(visible, model, plan.visible)
    assert latents.layers.shape == (cfg.enc_layers + 1, len(plan.visible), cfg.enc_dim)
    out = decode_reconstruct(latents, plan, prepared.tokens, model)
    assert out.shape == (k, d * t)
    assert torch.isfinite(reconstruction_loss(out, prepared.centered, plan))


def test_padded_batch_matches_unpadded_loss(toy_cfg):
    # a padded person's tokens must neither contribute to nor change the loss of real tokens
    model = PretrainModel(toy_cfg, seed=0).double()
    a = make_scene(n=2, j=3, t=15, seed=1)
    b = make_scene(n=3, j=3, t=15, seed=2)
    prepared = [prepare_scene(s) for s in pad_batch([a, b], 15)]
    assert prepared[0].scene.padded.tolist() == [False, False, True]
    plans = [MaskPlan.unmasked(9), MaskPlan.unmasked(9)]
    loss_pad = batch_reconstruction_loss(model, prepared[:1], plans[:1], "all_tokens")
    alone = prepare_scene(a)
    loss_alone = batch_reconstruction_loss(model, [alone], [MaskPlan.unmasked(6)], "all_tokens")
    assert loss_pad.item() == pytest.approx(loss_alone.item(), rel=1e-9)


def test_reconstruction_gradient_check(tiny_cfg):
    torch.manual_seed(0)
    model = PretrainModel(tiny_cfg, seed=0).double()
    scene = make_scene(n=2, j=2, t=4, d=3)
    prepared = [prepare_scene(scene)]
    plans = [sample_tube_mask(4, 0.5, 1)]
    errors = model_fd_check(model, lambda: batch_reconstruction_loss(model, prepared, plans, "masked_only"))
    assert max(errors.values()) < 1e-4, errors
