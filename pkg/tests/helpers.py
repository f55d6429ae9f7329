"""Central finite-difference oracles shared by the unit and acceptance tests."""

import numpy as np
from scipy.signal import lfilter

from cryage.audio_io import AudioClip

from cryage.cnn import layers as L
from cryage.cnn.model import Model, conv, dense, flatten, maxpool, relu, softmax
from cryage.features import estimate_formants
from cryage.synth import apply_formants

H = 1e-4

# filled by the acceptance tests, printed in the terminal summary
ACCEPTANCE_LINES = []


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def numeric_grad(f, x, h=H):
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def layer_checks(seed=0):
    """Relative error of every layer's analytic gradients (name -> error)."""
    rng = np.random.default_rng(seed)
    out = {}

    for padding in ("same", "valid"):
        x = rng.standard_normal((2, 8, 8, 2))
        w = rng.standard_normal((5, 5, 2, 3))
        b = rng.standard_normal(3)
        proj = rng.standard_normal(L.conv2d_forward(x, w, b, padding)[0].shape)
        loss = lambda: float(np.sum(L.conv2d_forward(x, w, b, padding)[0] * proj))
        _, cache = L.conv2d_forward(x, w, b, padding)
        gx, gw, gb = L.conv2d_backward(proj, cache)
        out[f"conv_{padding}_input"] = rel_err(gx, numeric_grad(loss, x))
        out[f"conv_{padding}_weights"] = rel_err(gw, numeric_grad(loss, w))
        out[f"conv_{padding}_bias"] = rel_err(gb, numeric_grad(loss, b))

    # distinct values keep the pooling argmax away from ties under perturbation
    x = rng.permutation(np.arange(2 * 8 * 8 * 3, dtype=float)).reshape(2, 8, 8, 3) * 0.01
    proj = rng.standard_normal((2, 4, 4, 3))
    loss = lambda: float(np.sum(L.maxpool_forward(x)[0] * proj))
    out["maxpool"] = rel_err(L.maxpool_backward(proj, L.maxpool_forward(x)[1]), numeric_grad(loss, x))

    x = rng.standard_normal((3, 10))
    x[np.abs(x) < 1e-2] = 0.5
    proj = rng.standard_normal((3, 10))
    loss = lambda: float(np.sum(L.relu_forward(x)[0] * proj))
    out["relu"] = rel_err(L.relu_backward(proj, L.relu_forward(x)[1]), numeric_grad(loss, x))

    x = rng.standard_normal((4, 6))
    w = rng.standard_normal((6, 5))
    b = rng.standard_normal(5)
    proj = rng.standard_normal((4, 5))
    loss = lambda: float(np.sum(L.dense_forward(x, w, b)[0] * proj))
    gx, gw, gb = L.dense_backward(proj, x, w)
    out["dense_input"] = rel_err(gx, numeric_grad(loss, x))
    out["dense_weights"] = rel_err(gw, numeric_grad(loss, w))
    out["dense_bias"] = rel_err(gb, numeric_grad(loss, b))

    z = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    loss = lambda: L.cross_entropy(L.softmax(z), labels)
    out["softmax_xent"] = rel_err(L.softmax_xent_backward(L.softmax(z), labels), numeric_grad(loss, z))
    return out


def mini_model(seed=0):
    layers = [conv(3, 3, "same"), relu(), maxpool(), conv(4, 3, "valid"), relu(), maxpool(),
              flatten(), dense(6), relu(), dense(2), softmax()]
    return Model(layers, (16, 16, 1), rng_seed=seed, dtype=np.float64)


def model_check(seed=0):
    """Largest relative error over all parameters of a miniature model."""
    rng = np.random.default_rng(seed)
    model = mini_model(seed)
    # scale up the logit layer so its gradients are not vanishingly small
    model.params[-2]["W"] *= 50
    x = rng.standard_normal((4, 16, 16, 1))
    y = np.array([0, 1, 1, 0])
    _, grads, _ = model.loss_and_grads(x, y)
    loss = lambda: model.loss_and_grads(x, y)[0]
    worst = 0.0
    for i, name, arr in model.param_list():
        worst = max(worst, rel_err(grads[i][name], numeric_grad(loss, arr)))
    return worst


def tilted_noise_formants(f1, f2, seed):
    noise = lfilter([1.0], [1.0, -0.97], np.random.default_rng(seed).standard_normal(16000))
    clip = apply_formants(AudioClip(noise / np.max(np.abs(noise)), 16000),
                          [(f1, 80 + 0.04 * f1), (f2, 100 + 0.04 * f2)])
    return estimate_formants(clip.normalized(0.9)).median()


def random_formant_pairs(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        f1, f2 = rng.uniform(500, 2000), rng.uniform(1500, 4500)
        if f2 > 1.3 * f1:
            out.append((f1, f2))
    return out
