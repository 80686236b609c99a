import numpy as np
import pytest
import torch
from torch import nn

from macoviz.errors import (
    InvalidInputError,
    InvalidTargetError,
    NumericFailureError,
    TrainingError,
    UnsupportedModelError,
)
from macoviz.models import (
    ARCHITECTURES,
    LOGITS,
    TRANSFER_ARCHS,
    TorchAdapter,
    available_plugins,
    build_network,
    generate_shapes_dataset,
    load_model,
    load_network,
    reference_model,
    register_plugin,
    save_network,
    train_reference,
    zero_model,
)
from macoviz.objectives import channel_objective, logit_objective


class _Linear(nn.Module):
    def __init__(self, w):
        super().__init__()
        self.register_buffer("w", w)

    def forward(self, x):
        return (x * self.w).sum(dim=(1, 2, 3)).unsqueeze(1)


def test_shapes_dataset_contract():
    a = generate_shapes_dataset(10, 7, 32)
    assert sorted(a.labels.tolist()) == list(range(10))
    assert a.images.shape == (10, 3, 32, 32) and a.images.dtype == np.float32
    assert a.images.min() >= 0 and a.images.max() <= 1
    b = generate_shapes_dataset(10, 7, 32)
    assert a.images.tobytes() == b.images.tobytes() and (a.labels == b.labels).all()
    assert generate_shapes_dataset(10, 8, 32).images.tobytes() != a.images.tobytes()
    with pytest.raises(InvalidInputError):
        generate_shapes_dataset(5, 0)


def test_split_is_stratified():
    train, test = generate_shapes_dataset(200, 0, 16).split(0.1)
    assert len(train) == 180 and np.bincount(test.labels).tolist() == [2] * 10


def test_identity_stage_returns_input(rng):
    model = TorchAdapter([("image", nn.Identity()), (LOGITS, nn.Flatten())], (4, 4, 3), name="id")
    x = torch.from_numpy(rng.uniform(size=(2, 3, 4, 4)).astype(np.float32))
    assert torch.equal(model.forward_activations(x, "image"), x)


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_catalog_and_shapes(arch, rng):
    model = build_network(arch, seed=0)
    assert model.layer_ids[-1] == LOGITS and model.penultimate == "pool"
    assert model.class_count == 10
    x = torch.from_numpy(rng.uniform(size=(3, 3, 32, 32)).astype(np.float32))
    for layer_id, channels in model.layer_catalog:
        act = model.forward_activations(x, layer_id)
        assert act.shape[:2] == (3, channels)
    assert model.logits(x[0]).shape == (1, 10)
    assert torch.equal(model.logits(x), model.logits(x))
    with pytest.raises(InvalidTargetError):
        model.forward_activations(x, "conv99")


def test_linear_gradient_is_exact(rng):
    w = torch.from_numpy(rng.normal(size=(1, 3, 5, 5)))
    model = TorchAdapter([(LOGITS, _Linear(w))], (5, 5, 3), name="lin")
    x = torch.from_numpy(rng.uniform(size=(3, 5, 5)))
    value, grad = model.objective_input_gradient(logit_objective(0), x)
    np.testing.assert_array_equal(grad, w[0].numpy())
    assert value == pytest.approx(float((w[0] * x).sum()))


def test_constant_model_zero_gradient(rng):
    x = rng.uniform(size=(3, 32, 32)).astype(np.float32)
    value, grad = zero_model().objective_input_gradient(logit_objective(4), x)
    assert value == 0.0 and not grad.any()


def test_non_finite_forward(rng):
    model = TorchAdapter([(LOGITS, nn.Flatten())], (2, 2, 1), name="flat")
    x = np.full((1, 2, 2), np.inf)
    with pytest.raises(NumericFailureError):
        model.objective_input_gradient(logit_objective(0), x)


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_input_gradient_matches_finite_differences(arch, rng):
    model = build_network(arch, seed=2).to(torch.float64)
    x = rng.uniform(0.1, 0.9, size=(3, 32, 32))
    for objective in (logit_objective(1), channel_objective("conv2", 1)):
        _, grad = model.objective_input_gradient(objective, x)
        for _ in range(3):
            d = rng.normal(size=x.shape)
            eps = 1e-7  # small enough not to cross ReLU kinks in float64
            fd = (objective(model, torch.from_numpy(x + eps * d)) - objective(model, torch.from_numpy(x - eps * d))) / (2 * eps)
            analytic = float((grad * d).sum())
            assert abs(analytic - float(fd)) <= 1e-3 * max(abs(analytic), 1e-8)


def test_untrained_is_chance():
    data = generate_shapes_dataset(1000, 3, 32)
    model = train_reference(0, data, epochs=0)
    assert abs(model.held_out_accuracy - 0.10) <= 0.05


def test_training_is_deterministic():
    data = generate_shapes_dataset(200, 4, 32)
    a = train_reference(1, data, epochs=1, min_accuracy=None)
    b = train_reference(1, data, epochs=1, min_accuracy=None)
    sa, sb = a.state_dict(), b.state_dict()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)


def test_training_gate():
    data = generate_shapes_dataset(100, 4, 32)
    with pytest.raises(TrainingError):
        train_reference(0, data, epochs=1)


def test_unbalanced_training_set():
    data = generate_shapes_dataset(100, 4, 32)
    with pytest.raises(InvalidInputError):
        train_reference(0, data.subset(np.flatnonzero(data.labels != 3)), epochs=0)


def test_reference_accuracy_gate(trained_net):
    assert trained_net.held_out_accuracy >= 0.90


@pytest.mark.parametrize("arch", TRANSFER_ARCHS)
def test_transfer_models_reach_gate(arch):
    assert reference_model(0, arch).held_out_accuracy >= 0.80


def test_save_load_round_trip(tmp_path, untrained_net, rng):
    path = tmp_path / "net.macomdl"
    save_network(untrained_net, path, seed=3)
    loaded = load_network(path)
    x = torch.from_numpy(rng.uniform(size=(2, 3, 32, 32)).astype(np.float32))
    assert torch.equal(loaded.logits(x), untrained_net.logits(x))
    assert loaded.seed == 3


def test_plugin_wrapping_reference_matches(tmp_path, untrained_net, rng):
    path = tmp_path / "net.macomdl"
    save_network(untrained_net, path)
    via_plugin = load_model(f"plugin:reference:{path}")
    x = torch.from_numpy(rng.uniform(size=(2, 3, 32, 32)).astype(np.float32))
    assert torch.equal(via_plugin.logits(x), untrained_net.logits(x))
    assert via_plugin.layer_catalog == untrained_net.layer_catalog


def test_descriptors(trained_net):
    assert load_model("ref:0").layer_catalog == trained_net.layer_catalog
    assert load_model("plugin:zero").name == "zero"
    for bad in ("resnet50", "ref:x", "ref:0:vgg", "plugin:nothing-here", "plugin:"):
        with pytest.raises(UnsupportedModelError):
            load_model(bad)
    with pytest.raises(UnsupportedModelError, match="zero"):
        load_model("plugin:nothing-here")


def test_register_plugin():
    register_plugin("tiny-test", lambda path=None: zero_model((8, 8, 3), 4))
    assert "tiny-test" in available_plugins()
    assert load_model("plugin:tiny-test").class_count == 4
    register_plugin("broken-test", lambda path=None: object())
    with pytest.raises(UnsupportedModelError):
        load_model("plugin:broken-test")
