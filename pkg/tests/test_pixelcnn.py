import numpy as np
import pytest

from picolor import autograd as ag
from picolor import mixture as mx
from picolor.evaluation import sample_sequential
from picolor.model import ColorizationModel, ModelConfig
from picolor.nn import randomize_gains
from picolor.params import ParameterStore
from picolor.pixelcnn import ARConfig, PixelCNN, causal_mask, dependency_matrix
from picolor.selftest import causality_check


def small_net(rng, gating=True, channels=8, blocks=2, cond=3):
    store = ParameterStore()
    net = PixelCNN(ARConfig(n_resblocks=blocks, channels=channels, gating=gating), store,
                   cond_channels=cond, rng=rng)
    randomize_gains(store, rng)
    return net, store


@pytest.mark.parametrize("seed", range(3))
def test_no_dependence_on_current_or_future_pixels(seed):
    dep, mask = causality_check(grid=8, seed=seed, channels=8, blocks=2)
    assert not np.any(dep & ~mask)


def test_ungated_network_is_causal_too(rng):
    net, store = small_net(rng, gating=False)
    dep = dependency_matrix(net, store.tensors(), rng.uniform(-1, 1, (1, 2, 6, 7)), rng.normal(size=(1, 3, 6, 7)))
    assert not np.any(dep & ~causal_mask(6, 7))


def test_context_reaches_left_neighbour_and_row_above(rng):
    net, store = small_net(rng)
    h = w = 6
    dep = dependency_matrix(net, store.tensors(), rng.uniform(-1, 1, (1, 2, h, w)))
    for y in range(h):
        for x in range(w):
            i = y * w + x
            if x > 0:
                assert dep[i, i - 1]
            if y > 0:
                # the whole row above, including pixels to the right
                assert dep[i, (y - 1) * w:y * w].all()


def test_first_pixel_sees_no_chroma():
    dep, _ = causality_check(grid=5, seed=9, channels=8, blocks=1)
    assert not dep[0].any()


def test_causal_mask_is_strictly_lower_triangular():
    m = causal_mask(2, 3)
    assert m.shape == (6, 6)
    assert m.sum() == 15 and not np.any(np.diag(m))


def test_head_width_is_six_per_component(rng):
    net, store = small_net(rng)
    out = net(store.tensors(), ag.Tensor(np.zeros((1, 2, 3, 3))), ag.Tensor(np.zeros((1, 3, 3, 3))))
    assert out.shape == (1, 60, 3, 3)
    assert ARConfig().n_outputs == 60


def test_gating_keeps_parameter_names(rng):
    _, gated = small_net(rng, gating=True)
    _, plain = small_net(rng, gating=False)
    assert gated.names() == plain.names()
    assert gated.n_values() > plain.n_values()


def test_odd_width_rejected():
    with pytest.raises(ValueError, match="even"):
        ARConfig(channels=7)


def test_misaligned_embedding_rejected(rng):
    net, store = small_net(rng)
    with pytest.raises(ValueError, match="not aligned"):
        net(store.tensors(), ag.Tensor(np.zeros((1, 2, 4, 4))), ag.Tensor(np.zeros((1, 3, 2, 2))))


def test_bad_chroma_shape_rejected(rng):
    net, store = small_net(rng)
    with pytest.raises(ValueError, match="chroma"):
        net(store.tensors(), ag.Tensor(np.zeros((1, 3, 4, 4))))


def test_conditioning_path_is_live(rng):
    net, store = small_net(rng)
    p = store.tensors()
    chroma = ag.Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)))
    emb = rng.normal(size=(1, 3, 4, 4))
    with_emb = net(p, chroma, ag.Tensor(emb)).data
    zeroed = net(p, chroma, ag.Tensor(np.zeros_like(emb))).data
    assert not np.array_equal(with_emb, zeroed)
    with ag.Tape() as tape:
        e = ag.Tensor(emb, requires_grad=True)
        g = tape.backward(ag.tsum(net(p, chroma, e)))[e]
    assert np.all(np.any(g != 0, axis=1))


# ------------------------------------------------------------------ sampling

@pytest.fixture
def tiny_model():
    cfg = ModelConfig(embedding="toy", ar=ARConfig(n_resblocks=1, channels=8, log_scale_floor=-20.0), factor=2)
    model = ColorizationModel(cfg, seed=5)
    randomize_gains(model.store, np.random.default_rng(5))
    return model


def test_sampling_runs_one_forward_pass_per_pixel(tiny_model, rng):
    emb = tiny_model.embed(tiny_model.params(), rng.uniform(-1, 1, (2, 1, 8, 8)))
    tiny_model.ar_net.forward_count = 0
    sample_sequential(tiny_model, emb, [1, 2], variant="raw")
    assert tiny_model.ar_net.forward_count == 16


def test_delta_limit_sampling_equals_map_rollout(tiny_model, rng):
    store = tiny_model.store
    head_gain, head_bias = store["ar.head.gain"].value, store["ar.head.bias"].value
    k = 10
    # one dominant component, near-zero scales; means and the b-on-a slope stay context dependent
    head_gain[0:k] = 0.0
    head_bias[0:k] = 0.0
    head_bias[0] = 40.0
    head_gain[3 * k:5 * k] = 0.0
    head_bias[3 * k:5 * k] = -20.0
    p = tiny_model.params("raw")
    emb = tiny_model.embed(p, rng.uniform(-1, 1, (1, 1, 8, 8)))

    a_s, b_s, _ = sample_sequential(tiny_model, emb, [123], variant="raw")

    h = w = 4
    canvas = np.zeros((1, 2, h, w))
    centers = np.linspace(-1.0, 1.0, 256)
    for y in range(h):
        for x in range(w):
            out = tiny_model.ar_net(p, ag.Tensor(canvas), emb).data[:, :, y, x]
            a, b = mx.map_estimate(mx.MixtureParams.from_channels(out), "exact", floor=-20.0)
            assert (a_s[0, y, x], b_s[0, y, x]) == (a[0], b[0])
            canvas[0, :, y, x] = centers[a[0]], centers[b[0]]
