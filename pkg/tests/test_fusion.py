import pytest
import torch
from torch import nn

from memefuse.corpus import build_vocabulary
from memefuse.models.backbones import StubBackboneProvider, UnknownBackbone
from memefuse.models.base import count_trainable
from memefuse.models.fusion import (
    FusionSpec,
    ShapeMismatch,
    build_fusion_model,
    build_image_branch,
    build_text_branch,
    fuse_branches,
    fusion_training_plan,
)
from oracles import all_changed, all_identical, head_gradcheck, sgd_steps, snapshot, valid_conv_pool_sides

PAIRINGS = [("custom_cnn", "bilstm_single"), ("inception_v3", "bilstm_single"), ("resnet50", "bilstm_stacked")]


def _inputs(batch, vocab_size=20, max_len=50, seed=0):
    g = torch.Generator().manual_seed(seed)
    ids = torch.randint(2, vocab_size, (batch, max_len), generator=g)
    ids[:, max_len // 2 :] = 0
    return {"images": torch.rand(batch, 3, 150, 150, generator=g), "token_ids": ids}


def _model(image, text, vocab_size=20):
    torch.manual_seed(0)
    spec = FusionSpec(image, text, vocab_size=vocab_size)
    return build_fusion_model(spec, None, StubBackboneProvider())


def test_cnn_branch_flatten_width():
    branch = build_image_branch("custom_cnn")
    side = valid_conv_pool_sides(150, 4)[-1]
    assert branch.flatten_width == side * side * 64 == 3136
    convs = [m for m in branch.features if isinstance(m, nn.Conv2d)]
    assert [c.out_channels for c in convs] == [32, 64, 128, 64]
    assert branch.dense.out_features == 256 and branch.out.out_features == 1
    x = branch.features(torch.rand(1, 3, 150, 150))
    assert x.shape == (1, 64, 7, 7)


@pytest.mark.parametrize("kind", ["custom_cnn", "inception_v3", "resnet50"])
def test_image_branch_outputs_probabilities(kind):
    branch = build_image_branch(kind, StubBackboneProvider()).eval()
    out = branch(torch.rand(2, 3, 150, 150))
    assert out.shape == (2, 1) and torch.all((out > 0) & (out < 1))


def test_unknown_image_branch():
    with pytest.raises(UnknownBackbone):
        build_image_branch("vgg19", StubBackboneProvider())


def test_resnet_branch_frozen_after_step():
    torch.manual_seed(0)
    branch = build_image_branch("resnet50", StubBackboneProvider())
    base = list(branch.base.parameters())
    b0 = snapshot(base)
    opt = torch.optim.Adam([p for p in branch.parameters() if p.requires_grad], lr=1e-2)
    loss = nn.functional.binary_cross_entropy(branch(torch.rand(2, 3, 150, 150)).squeeze(1), torch.tensor([1.0, 0.0]))
    loss.backward()
    opt.step()
    assert all_identical(b0, base)
    assert not any(p.requires_grad for p in base)


def test_text_branch_widths():
    single = build_text_branch("bilstm_single", 30)
    assert single.embedding.embedding_dim == 100 and single.lstm1.hidden_size == 128
    assert single.encode(torch.randint(0, 30, (3, 50))).shape == (3, 256)
    stacked = build_text_branch("bilstm_stacked", 30)
    assert (stacked.lstm1.hidden_size, stacked.lstm2.hidden_size) == (128, 64)
    assert stacked.dropout.p == 0.2
    assert stacked.encode(torch.randint(0, 30, (3, 50))).shape == (3, 128)


@pytest.mark.parametrize("kind", ["bilstm_single", "bilstm_stacked"])
def test_all_padding_is_finite(kind):
    branch = build_text_branch(kind, 10).eval()
    out = branch(torch.zeros(2, 50, dtype=torch.long))
    assert torch.isfinite(out).all() and out.shape == (2, 1)


def test_text_branch_ignores_trailing_padding():
    branch = build_text_branch("bilstm_single", 10).eval()
    short = torch.tensor([[3, 4, 5] + [0] * 7])
    longer = torch.tensor([[3, 4, 5] + [0] * 17])
    torch.testing.assert_close(branch(short), branch(longer))


def test_vocab_size_check():
    with pytest.raises(ValueError):
        build_text_branch("bilstm_single", 1)


@pytest.mark.parametrize("image, text", PAIRINGS)
@pytest.mark.parametrize("batch", [1, 3])
def test_fusion_shapes(image, text, batch):
    model = _model(image, text).eval()
    img, txt = model.branch_outputs(_inputs(batch))
    assert img.shape == txt.shape == (batch, 1)
    out = model(_inputs(batch))
    assert out.shape == (batch,)
    assert model.final.in_features == 2
    assert sum(p.numel() for p in model.final.parameters()) == 3


def test_nonreference_pairing_flagged():
    assert FusionSpec("resnet50", "bilstm_stacked", 10).is_reference_configuration
    with pytest.warns(UserWarning):
        spec = FusionSpec("custom_cnn", "bilstm_stacked", 10)
    assert not spec.is_reference_configuration


class _Rank3(nn.Module):
    def forward(self, x):
        return torch.zeros(x.shape[0], 1, 1)


def test_shape_mismatch():
    model = fuse_branches(_Rank3(), build_text_branch("bilstm_single", 20))
    with pytest.raises(ShapeMismatch):
        model(_inputs(2))


@pytest.mark.parametrize("image, text", PAIRINGS)
def test_gradient_reaches_both_branches(image, text):
    model = _model(image, text)
    img_head = list(model.image_branch.out.parameters())
    txt_head = list(model.text_branch.out.parameters())
    i0, t0 = snapshot(img_head), snapshot(txt_head)
    sgd_steps(model, _inputs(4), torch.tensor([1.0, 0.0, 1.0, 0.0]), steps=1)
    assert all_changed(i0, img_head) and all_changed(t0, txt_head)


def test_prediction_depends_on_both_modalities(synth_corpus):
    vocab = build_vocabulary(synth_corpus.train)
    torch.manual_seed(0)
    model = build_fusion_model(FusionSpec("custom_cnn", "bilstm_single", len(vocab)), vocab)
    train = model.prepare(synth_corpus.train)
    targets = torch.tensor([float(r.target) for r in synth_corpus.train])
    sgd_steps(model, train, targets, steps=3, lr=1e-3)
    model.eval()
    a, b = model.prepare(synth_corpus.valid[:2]), model.prepare(synth_corpus.valid[2:4])
    swap_img = dict(a, images=b["images"])
    swap_txt = dict(a, token_ids=b["token_ids"])
    with torch.no_grad():
        p, pi, pt = model(a), model(swap_img), model(swap_txt)
        assert not torch.equal(p, pi) and not torch.equal(p, pt)
        # a deterministic function of the inputs
        assert torch.equal(model(a), p) and torch.equal(model(swap_img), pi)


@pytest.mark.parametrize("image, text", PAIRINGS)
def test_frozen_bases_in_fusion(image, text):
    model = _model(image, text)
    if image == "custom_cnn":
        assert count_trainable(model) == sum(p.numel() for p in model.parameters())
        return
    base = list(model.image_branch.base.parameters())
    b0 = snapshot(base)
    sgd_steps(model, _inputs(2), torch.tensor([1.0, 0.0]), steps=3)
    assert all_identical(b0, base)


@pytest.mark.parametrize("image, text", PAIRINGS)
def test_final_layer_gradient_check(image, text):
    model = _model(image, text)
    assert head_gradcheck(model, _inputs(2), torch.tensor([1.0, 0.0])) <= 1e-3


def test_prepare_uses_vocab(synth_corpus):
    vocab = build_vocabulary(synth_corpus.train)
    model = build_fusion_model(FusionSpec("custom_cnn", "bilstm_single", len(vocab)), vocab)
    x = model.prepare(synth_corpus.valid[:3])
    assert x["images"].shape == (3, 3, 150, 150) and x["token_ids"].shape == (3, 50)
    assert model.extra_state()["vocab"] == vocab.to_dict()


def test_fusion_plan():
    plan = fusion_training_plan()
    assert (plan.optimizer, plan.lr, plan.batch, plan.epochs) == ("adam", 1e-3, 32, 50)
    assert plan.loss == "binary_cross_entropy"
