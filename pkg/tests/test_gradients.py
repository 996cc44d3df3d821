import pytest
import torch

from cma_grounding.losses import compute_losses
from cma_grounding.model import build_model

from conftest import check_param_gradients, random_inputs, tiny_config


def model_gradient_errors(cfg, per_param=6, seed=0, eps=1e-5, zero=1e-7):
    """Worst relative autograd/central-difference error per parameter of the full loss.

    Many attention gradients sit near 1e-8 at initialization. With a step of
    1e-5 the quotient carries about 1e-10 of rounding noise, so errors are
    measured against a scale of at least ``zero``.
    """
    model = build_model(cfg, torch.float64)
    video, tokens, mask, gt = random_inputs(cfg, batch=3, seed=seed)

    def loss():
        return compute_losses(model(video, tokens, mask), gt, cfg.loss)[0]

    return check_param_gradients(model, loss, per_param=per_param, seed=seed, eps=eps, zero=zero)


@pytest.mark.parametrize("overrides", [
    {},
    {"pe_variant": "learned", "fusion_op": "concat"},
    {"fusion_op": "add", "k": 1},
    {"structure": "encoder_only", "k": 3},
    {"structure": "decoder_only", "residual": False},
])
def test_full_loss_gradients(overrides):
    cfg = tiny_config(**overrides)
    worst = model_gradient_errors(cfg)
    assert worst, "no parameters checked"
    bad = {k: v for k, v in worst.items() if v >= 1e-3}
    assert not bad, bad


def test_every_group_receives_gradient(cfg):
    model = build_model(cfg, torch.float64)
    video, tokens, mask, gt = random_inputs(cfg)
    compute_losses(model(video, tokens, mask), gt, cfg.loss)[0].backward()
    groups = {name.split(".")[0] for name, p in model.named_parameters()
              if p.grad is not None and p.grad.abs().sum() > 0}
    assert groups == {name.split(".")[0] for name, _ in model.named_parameters()}
