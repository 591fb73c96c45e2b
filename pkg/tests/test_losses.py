import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dad.errors import ShapeError, ValidationError
from dad.losses import LossConfig, pixel_weights, structure_loss, total_loss, weighted_bce, weighted_iou
from oracles import central_difference, relative_error


def random_gt(seed, shape=(2, 1, 16, 16)):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(shape, generator=gen) > 0.5).double()


def test_uniform_gt_gives_unit_weights():
    for value in (0.0, 1.0):
        gt = torch.full((1, 1, 9, 9), value)
        assert torch.equal(pixel_weights(gt, 3, 5.0), torch.ones_like(gt))
        assert torch.equal(pixel_weights(gt, 31, 5.0), torch.ones_like(gt))


def test_single_pixel_weight():
    gt = torch.zeros(1, 1, 7, 7, dtype=torch.float64)
    gt[0, 0, 3, 3] = 1
    w = pixel_weights(gt, 3, 5.0)
    assert w[0, 0, 3, 3].item() == pytest.approx(49 / 9, abs=1e-12)  # 1 + 5 * (1 - 1/9)
    assert w[0, 0, 3, 4].item() == pytest.approx(1 + 5 / 9, abs=1e-12)
    assert w[0, 0, 0, 0].item() == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5, 31]), st.floats(0.0, 10.0))
def test_weight_properties(seed, kernel, gain):
    gt = random_gt(seed)
    w = pixel_weights(gt, kernel, gain)
    assert torch.equal(w, pixel_weights(1 - gt, kernel, gain))
    assert w.min() >= 1 and w.max() <= 1 + gain + 1e-12


def test_weight_errors():
    with pytest.raises(ValidationError):
        pixel_weights(torch.full((1, 1, 4, 4), 0.5))
    with pytest.raises(ValidationError):
        LossConfig(weight_kernel=4).validate()
    with pytest.raises(ShapeError):
        weighted_bce(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 5, 5), torch.ones(1, 1, 5, 5))


def test_saturated_prediction():
    gt = random_gt(0).float()
    logits = 40 * (2 * gt - 1)
    w = pixel_weights(gt, 3, 5.0)
    assert weighted_bce(logits, gt, w) < 1e-6
    assert weighted_iou(logits, gt, w) < 1e-6
    assert total_loss([logits] * 3, gt, LossConfig(weight_kernel=3)) < 1e-5


@pytest.mark.parametrize("n", [16, 64, 256])
def test_half_probability_closed_form(n):
    gt = torch.zeros(1, 1, n, n, dtype=torch.float64)
    gt[..., : n // 2, :] = 1
    pixels = n * n
    expected = 1 - (0.25 * pixels + 1) / (0.75 * pixels + 1)
    value = weighted_iou(torch.zeros_like(gt), gt, torch.ones_like(gt)).item()
    assert value == pytest.approx(expected, abs=1e-12)
    if n == 256:
        assert value == pytest.approx(2 / 3, abs=1e-4)


def test_additivity_and_sensitivity():
    gt = random_gt(1)
    gen = torch.Generator().manual_seed(2)
    maps = [torch.randn(2, 1, 16, 16, generator=gen, dtype=torch.float64) for _ in range(3)]
    cfg = LossConfig(weight_kernel=3)
    parts = [structure_loss(m, gt, cfg) for m in maps]
    assert torch.equal(total_loss(maps, gt, cfg), parts[0] + parts[1] + parts[2])
    # checkerboard: every pixel is a boundary pixel
    board = (torch.arange(16)[:, None] + torch.arange(16)[None, :]) % 2
    board = board.double().expand(2, 1, 16, 16)
    assert total_loss(maps, board, LossConfig(3, 10.0)) != total_loss(maps, board, LossConfig(3, 5.0))


def test_coarse_maps_are_upsampled():
    gt = random_gt(3)
    coarse = torch.randn(2, 1, 4, 4, dtype=torch.float64)
    up = torch.nn.functional.interpolate(coarse, size=(16, 16), mode="bilinear", align_corners=False)
    cfg = LossConfig(weight_kernel=3)
    assert torch.equal(total_loss([coarse], gt, cfg), total_loss([up], gt, cfg))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 30.0))
def test_loss_non_negative(seed, scale):
    gen = torch.Generator().manual_seed(seed)
    maps = [scale * torch.randn(2, 1, 16, 16, generator=gen, dtype=torch.float64) for _ in range(3)]
    assert total_loss(maps, random_gt(seed), LossConfig(weight_kernel=5)) >= 0


def test_gradient_matches_finite_differences():
    gt = random_gt(4, (1, 1, 8, 8))
    logits = torch.randn(1, 1, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(5))
    logits = torch.nn.Parameter(logits)
    cfg = LossConfig(weight_kernel=3)
    loss = lambda: total_loss([logits, 0.5 * logits], gt, cfg)
    loss().backward()
    for index in (0, 9, 27, 63):
        analytic = logits.grad.view(-1)[index].item()
        assert relative_error(analytic, central_difference(loss, logits, index)) < 1e-3


def test_loss_decreases_under_descent(synthetic_samples):
    gt = torch.stack([s.mask for s in synthetic_samples[:4]]).double()
    logits = torch.nn.Parameter(torch.zeros_like(gt))
    opt = torch.optim.SGD([logits], lr=5.0)
    cfg = LossConfig(weight_kernel=31)
    history = []
    for _ in range(50):
        opt.zero_grad()
        loss = total_loss([logits], gt, cfg)
        loss.backward()
        opt.step()
        history.append(loss.item())
    assert all(b < a for a, b in zip(history, history[1:]))
