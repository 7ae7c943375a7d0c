import math

import numpy as np
import pytest
import torch

from rama.guidance import contrastive_loss, guidance_loss, total_loss
from rama.network import RamaNet
from rama.ops import gradcheck, param_set
from rama.selfcheck import TINY

from oracles import nt_xent_naive

D = torch.float64


def test_uniform_similarity_gives_ln3():
    v = torch.ones(2, 5, dtype=D)
    assert contrastive_loss(v, v.clone(), 0.1).item() == pytest.approx(math.log(3), abs=1e-12)
    # regular simplex: every pair at cosine -1/3
    s = torch.tensor([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=D)
    assert contrastive_loss(s[:2], s[2:], 0.7).item() == pytest.approx(math.log(3), abs=1e-12)


def test_positive_one_negatives_minus_one():
    e = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=D)
    expected = math.log((math.e + 2 * math.exp(-1)) / math.e)
    assert contrastive_loss(e, e.clone(), 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.23954, abs=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(2, 7))
    vi, vr = rng.standard_normal((b, 5)), rng.standard_normal((b, 5))
    t = float(rng.uniform(0.1, 1.0))
    got = contrastive_loss(torch.tensor(vi), torch.tensor(vr), t).item()
    assert got == pytest.approx(nt_xent_naive(vi, vr, t), abs=1e-9)


def test_finite_at_extreme_logits():
    e = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]], dtype=D)
    loss = contrastive_loss(e, -e, 1e-4)
    assert torch.isfinite(loss)
    loss = contrastive_loss(e, e.clone(), 1e-4)
    assert torch.isfinite(loss)


def test_scale_invariance(rng):
    vi, vr = torch.tensor(rng.standard_normal((4, 6))), torch.tensor(rng.standard_normal((4, 6)))
    base = contrastive_loss(vi, vr, 0.2).item()
    for s in (0.5, 2.0, 10.0):
        scaled = vi.clone()
        scaled[1] *= s
        assert contrastive_loss(scaled, vr * s, 0.2).item() == pytest.approx(base, abs=1e-6)


def test_monotone_positive_pair_direct():
    # two fixed negatives; rotate the positive towards the anchor
    anchor = torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=D)
    losses = []
    for angle in np.linspace(np.pi / 2, 0.0, 6):
        pos = torch.tensor([[math.cos(angle), math.sin(angle), 0.0], [0.0, 1.0, 0.0]], dtype=D)
        losses.append(contrastive_loss(anchor, pos, 0.5).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_errors():
    with pytest.raises(ValueError):
        contrastive_loss(torch.ones(1, 3), torch.ones(1, 3))
    with pytest.raises(ValueError):
        contrastive_loss(torch.ones(2, 3), torch.ones(2, 3), 0.0)
    with pytest.raises(ValueError):
        contrastive_loss(torch.ones(2, 3), torch.ones(3, 3))


def test_total_loss():
    logit = torch.zeros(1, dtype=D)
    assert total_loss(logit, [1.0]).item() == pytest.approx(math.log(2), abs=1e-12)
    l_rg = torch.tensor(0.8, dtype=D)
    assert total_loss(logit, [1.0], l_rg, 0.0).item() == pytest.approx(math.log(2), abs=1e-12)
    assert total_loss(logit, [1.0], l_rg, 2.5).item() == pytest.approx(math.log(2) + 2.0, abs=1e-12)


def test_projectors():
    model = RamaNet(TINY, seed=0).double()
    v = torch.randn(3, TINY.encoder_width, dtype=D)
    r = torch.randn(3, 25, dtype=D)
    assert model.project_image("DCE", v).shape == (3, TINY.proj_dim)
    assert model.project_radiomics("ADC", r).shape == (3, TINY.proj_dim)
    with torch.no_grad():
        for p in model.image_projectors["DCE"].parameters():
            p.zero_()
        model.image_projectors["DCE"].fc2.bias.fill_(0.25)
    assert torch.equal(model.project_image("DCE", v), torch.full((3, TINY.proj_dim), 0.25, dtype=D))
    proj = model.radiomics_projectors["ADC"]
    w = torch.randn(3, TINY.proj_dim, dtype=D)
    assert gradcheck(lambda: (proj(r) * w).sum(), param_set(proj), probes=30) <= 1e-6
    with pytest.raises(ValueError):
        model.project_radiomics("ADC", torch.randn(2, 24, dtype=D))


def test_guidance_loss_is_mean_of_modalities():
    model = RamaNet(TINY, seed=1).double()
    gap = {m: torch.randn(3, TINY.encoder_width, dtype=D) for m in TINY.modalities}
    rad = {m: torch.randn(3, 25, dtype=D) for m in TINY.modalities}

    class Out:
        pass

    out = Out()
    out.gap = gap
    per = [contrastive_loss(model.project_image(m, gap[m]), model.project_radiomics(m, rad[m]), 0.3)
           for m in TINY.modalities]
    expected = float(sum(p.detach() for p in per) / 2)
    assert guidance_loss(model, out, rad, 0.3).detach().item() == pytest.approx(expected, abs=1e-12)
