"""Toy transformer: forward oracle, exact gradients, checkpoints."""

import numpy as np
import pytest

from pde_attention.attention import gradient_check
from pde_attention.errors import ConfigError
from pde_attention.model import (
    AttentionVariant,
    CHECKPOINT_VERSION,
    ModelConfig,
    PdeTransformer,
    TaskKind,
    cross_entropy_from_logits,
    gelu,
    gelu_grad,
    layer_norm_backward,
    layer_norm_forward,
    model_forward,
)
from pde_attention.pde import PdeConfig, PdeKind

FD_TOL = 1e-4  # full-model composition; per-op checks hold 1e-5 elsewhere


def small_config(**overrides) -> ModelConfig:
    base = dict(
        n_layers=1, n_heads=2, d_model=4, d_hidden=8, vocab_size=5,
        max_seq_len=8, task=TaskKind.CAUSAL_LM,
        pde=PdeConfig(kind=PdeKind.DIFFUSION, alpha=0.1, dt=1.0, n_steps=2,
                      renormalize_rows=True, clamp_nonnegative=True),
    )
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def test_config_dict_round_trip():
    cfg = small_config(task=TaskKind.CLASSIFICATION, n_classes=3,
                       attention_variant=AttentionVariant.HYBRID)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert isinstance(again.pde, PdeConfig)


def test_config_rejects_unknown_keys():
    data = small_config().to_dict()
    data["dropout"] = 0.1
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(data)


def test_config_requires_divisible_heads():
    with pytest.raises(ConfigError):
        small_config(n_heads=3)


def test_standard_variant_forces_zero_steps():
    cfg = small_config(attention_variant=AttentionVariant.STANDARD)
    assert cfg.effective_pde().n_steps == 0
    assert cfg.pde.n_steps == 2  # the stored config is untouched


def test_wave_has_no_learnable_coefficients():
    cfg = small_config(pde=PdeConfig(kind=PdeKind.WAVE, c=0.2, dt=1.0, n_steps=1))
    assert not cfg.has_learnable_coefficients()
    model = PdeTransformer(cfg, np.random.default_rng(0))
    assert not any(k.endswith("alpha") for k in model.params)


# ---------------------------------------------------------------------------
# micro-ops: gelu, layer norm, cross entropy
# ---------------------------------------------------------------------------


def test_gelu_grad_matches_finite_differences():
    u = np.linspace(-3, 3, 41)
    eps = 1e-6
    numeric = (gelu(u + eps) - gelu(u - eps)) / (2 * eps)
    np.testing.assert_allclose(gelu_grad(u), numeric, atol=1e-9)


def test_layer_norm_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5))
    gamma = rng.normal(size=5)
    beta = rng.normal(size=5)
    w = rng.normal(size=(3, 5))  # fixed projection making the output a scalar

    def loss_from(x_val, g_val, b_val):
        out, _ = layer_norm_forward(x_val, g_val, b_val)
        return float((out * w).sum())

    out, cache = layer_norm_forward(x, gamma, beta)
    dx, d_gamma, d_beta = layer_norm_backward(w, cache)
    report = gradient_check(lambda v: loss_from(v, gamma, beta), x, dx)
    assert report.max_rel_error < 1e-6
    report = gradient_check(lambda v: loss_from(x, v, beta), gamma, d_gamma)
    assert report.max_rel_error < 1e-6
    report = gradient_check(lambda v: loss_from(x, gamma, v), beta, d_beta)
    assert report.max_rel_error < 1e-6


def test_cross_entropy_matches_manual():
    logits = np.array([[2.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
    targets = np.array([0, 2])
    loss, probs = cross_entropy_from_logits(logits, targets)
    manual_p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -np.mean([np.log(manual_p[0, 0]), np.log(manual_p[1, 2])])
    assert abs(loss - expected) < 1e-12
    np.testing.assert_allclose(probs, manual_p, atol=1e-12)


def test_cross_entropy_is_shift_stable():
    logits = np.array([[1000.0, 1000.0, 999.0]])
    loss, probs = cross_entropy_from_logits(logits, np.array([0]))
    assert np.isfinite(loss)
    np.testing.assert_allclose(probs.sum(), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# forward: shapes, batching, degenerate equivalences
# ---------------------------------------------------------------------------


def test_forward_shapes_lm_and_classification():
    tokens = np.array([[1, 2, 3, 0], [4, 0, 1, 2]])
    lm = PdeTransformer(small_config(), np.random.default_rng(1))
    assert lm.forward(tokens).shape == (2, 4, 5)
    clf = PdeTransformer(small_config(task=TaskKind.CLASSIFICATION, n_classes=3),
                         np.random.default_rng(1))
    assert clf.forward(tokens).shape == (2, 3)
    # 1-D input is promoted to a singleton batch
    assert lm.forward(tokens[0]).shape == (1, 4, 5)
    assert model_forward(lm, tokens).shape == (2, 4, 5)


def test_forward_validates_tokens():
    model = PdeTransformer(small_config(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        model.forward([[0, 9, 1, 1]])  # out of vocabulary
    with pytest.raises(ConfigError):
        model.forward([[0] * 9])  # longer than max_seq_len
    with pytest.raises(ConfigError):
        model.forward([[1]])  # below the 2-token minimum


def test_batch_rows_are_independent():
    rng = np.random.default_rng(7)
    tokens = rng.integers(0, 5, size=(3, 6))
    for task in (TaskKind.CAUSAL_LM, TaskKind.CLASSIFICATION):
        model = PdeTransformer(small_config(task=task), np.random.default_rng(2))
        batched = model.forward(tokens)
        rows = np.concatenate([model.forward(tokens[i]) for i in range(3)])
        np.testing.assert_allclose(batched, rows, atol=1e-12)


def test_standard_variant_equals_pde_with_zero_steps():
    tokens = np.array([[0, 1, 2, 3, 4, 0]])
    pde_zero = small_config(pde=PdeConfig(kind=PdeKind.DIFFUSION, alpha=0.1,
                                          dt=1.0, n_steps=0))
    standard = small_config(attention_variant=AttentionVariant.STANDARD)
    a = PdeTransformer(pde_zero, np.random.default_rng(3)).forward(tokens)
    b = PdeTransformer(standard, np.random.default_rng(3)).forward(tokens)
    np.testing.assert_array_equal(a, b)


def test_uniform_attention_is_a_diffusion_fixed_point():
    # zero query/key projections make every attention row uniform; with T a
    # power of two the uniform row is exactly representable, the stencil is
    # exactly zero, and any number of diffusion steps leaves the logits
    # bit-identical to the zero-step model.
    tokens = np.array([[0, 1, 2, 3, 4, 0, 1, 2]])
    evolved = PdeTransformer(small_config(), np.random.default_rng(5))
    frozen = PdeTransformer(
        small_config(pde=PdeConfig(kind=PdeKind.DIFFUSION, alpha=0.1, dt=1.0,
                                   n_steps=0, renormalize_rows=True,
                                   clamp_nonnegative=True)),
        np.random.default_rng(5))
    for model in (evolved, frozen):
        model.params["layers.0.attn.w_q"][:] = 0.0
        model.params["layers.0.attn.w_k"][:] = 0.0
    np.testing.assert_array_equal(evolved.forward(tokens), frozen.forward(tokens))


def test_one_layer_forward_matches_straight_line_reference():
    """Compositional oracle: rebuild the whole forward pass with plain numpy."""
    cfg = small_config(task=TaskKind.CLASSIFICATION, n_classes=3, max_seq_len=4)
    model = PdeTransformer(cfg, np.random.default_rng(11))
    tokens = np.array([2, 0, 3, 1])
    p = model.params
    t, d, n_heads, dh = 4, 4, 2, 2

    x = p["embedding"][tokens] + p["positional"][:t]

    # multi-head attention with two explicit diffusion steps per head
    q_all, k_all, v_all = x @ p["layers.0.attn.w_q"], x @ p["layers.0.attn.w_k"], \
        x @ p["layers.0.attn.w_v"]
    heads = []
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = q_all[:, cols] @ k_all[:, cols].T / np.sqrt(dh)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        alpha = p["layers.0.attn.alpha"][h]
        for _ in range(2):
            lap = np.roll(a, 1, axis=1) + np.roll(a, -1, axis=1) - 2 * a
            a = a + 1.0 * alpha * lap
            a = np.maximum(a, 0.0)
            a = a / a.sum(axis=1, keepdims=True)
        heads.append(a @ v_all[:, cols])
    att = np.concatenate(heads, axis=1) @ p["layers.0.attn.w_o"]

    def layer_norm(v, gamma, beta):
        mu = v.mean(axis=-1, keepdims=True)
        var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
        return gamma * (v - mu) / np.sqrt(var + 1e-5) + beta

    h1 = layer_norm(x + att, p["layers.0.ln1.gamma"], p["layers.0.ln1.beta"])
    u = h1 @ p["layers.0.ffn.w1"] + p["layers.0.ffn.b1"]
    c = np.sqrt(2.0 / np.pi)
    act = 0.5 * u * (1.0 + np.tanh(c * (u + 0.044715 * u ** 3)))
    f = act @ p["layers.0.ffn.w2"] + p["layers.0.ffn.b2"]
    h2 = layer_norm(h1 + f, p["layers.0.ln2.gamma"], p["layers.0.ln2.beta"])
    expected = h2.mean(axis=0) @ p["head.w"] + p["head.b"]

    np.testing.assert_allclose(model.forward(tokens)[0], expected, atol=1e-12)


# ---------------------------------------------------------------------------
# full-model gradients against finite differences
# ---------------------------------------------------------------------------


def directional_fd_check(model, tokens, labels=None, n_dirs=6, seed=0):
    """Check the full gradient along random unit directions in parameter space.

    The loss restricted to ``theta + sum_i s_i D_i`` is a scalar function of
    the coordinates ``s``; its gradient at ``s = 0`` is ``<G, D_i>``, which the
    elementwise checker can probe at healthy magnitudes even when individual
    gradient entries sit below central-difference cancellation noise.
    """
    _, grads = model.loss_and_gradients(tokens, labels)
    rng = np.random.default_rng(seed)
    keys = list(model.params)
    base = {k: model.params[k].copy() for k in keys}
    dirs = []
    for _ in range(n_dirs):
        d = {k: rng.standard_normal(base[k].shape) for k in keys}
        norm = np.sqrt(sum(float((v ** 2).sum()) for v in d.values()))
        dirs.append({k: v / norm for k, v in d.items()})
    analytic = np.array([
        sum(float((grads[k] * direction[k]).sum()) for k in keys)
        for direction in dirs
    ])

    def loss_at(s):
        for k in keys:
            model.params[k] = base[k] + sum(
                s[i] * dirs[i][k] for i in range(n_dirs))
        return model.loss(tokens, labels)

    try:
        report = gradient_check(loss_at, np.zeros(n_dirs), analytic)
    finally:
        for k in keys:
            model.params[k] = base[k]
    return report


def test_full_model_gradient_directional_lm():
    cfg = small_config(
        max_seq_len=6,
        pde=PdeConfig(kind=PdeKind.REACTION_DIFFUSION, alpha=0.1, beta=0.2,
                      dt=1.0, n_steps=2, renormalize_rows=True,
                      clamp_nonnegative=True))
    model = PdeTransformer(cfg, np.random.default_rng(0))
    tokens = np.array([[0, 3, 1, 4, 2, 0], [2, 2, 1, 0, 4, 3]])
    report = directional_fd_check(model, tokens)
    assert report.max_rel_error <= FD_TOL, report


def test_full_model_gradient_elementwise_with_floor():
    # every individual parameter, with the per-tensor gradient sup-norm as the
    # relative-error floor so that entries below FD cancellation noise are
    # held to an absolute standard
    cfg = small_config(
        max_seq_len=4,
        pde=PdeConfig(kind=PdeKind.REACTION_DIFFUSION, alpha=0.1, beta=0.2,
                      dt=1.0, n_steps=2, renormalize_rows=True,
                      clamp_nonnegative=True))
    model = PdeTransformer(cfg, np.random.default_rng(1))
    tokens = np.array([[0, 3, 1, 4], [2, 2, 1, 0]])
    _, grads = model.loss_and_gradients(tokens)
    for key in model.params:
        saved = model.params[key]

        def loss_at(arr, key=key):
            model.params[key] = arr
            return model.loss(tokens)

        floor = max(1e-12, float(np.abs(grads[key]).max()))
        try:
            report = gradient_check(loss_at, saved.copy(), grads[key], floor=floor)
        finally:
            model.params[key] = saved
        assert report.max_rel_error <= FD_TOL, (key, report)


def test_full_model_gradient_hybrid_classification():
    cfg = small_config(
        task=TaskKind.CLASSIFICATION, n_classes=2,
        attention_variant=AttentionVariant.HYBRID, window=2, n_global=1)
    model = PdeTransformer(cfg, np.random.default_rng(2))
    tokens = np.array([[0, 1, 2, 3, 4, 0, 1, 2]])
    labels = np.array([1])
    report = directional_fd_check(model, tokens, labels)
    assert report.max_rel_error <= FD_TOL, report


def test_full_model_gradient_wave():
    cfg = small_config(
        pde=PdeConfig(kind=PdeKind.WAVE, c=0.3, dt=1.0, n_steps=2,
                      renormalize_rows=True, clamp_nonnegative=True))
    model = PdeTransformer(cfg, np.random.default_rng(3))
    tokens = np.array([[4, 1, 0, 2, 3, 3]])
    report = directional_fd_check(model, tokens)
    assert report.max_rel_error <= FD_TOL, report


def test_loss_label_validation():
    clf = PdeTransformer(small_config(task=TaskKind.CLASSIFICATION),
                         np.random.default_rng(0))
    lm = PdeTransformer(small_config(), np.random.default_rng(0))
    tokens = np.array([[0, 1, 2, 3]])
    with pytest.raises(ConfigError):
        clf.loss(tokens)  # classification needs labels
    with pytest.raises(ConfigError):
        clf.loss(tokens, labels=[2])  # out of range for n_classes=2
    with pytest.raises(ConfigError):
        clf.loss(tokens, labels=[0, 1])  # batch mismatch
    with pytest.raises(ConfigError):
        lm.loss(tokens, labels=[0])  # causal LM derives its own targets


# ---------------------------------------------------------------------------
# inference helpers and checkpoints
# ---------------------------------------------------------------------------


def test_predict_and_probabilities():
    cfg = small_config(task=TaskKind.CLASSIFICATION, n_classes=3)
    model = PdeTransformer(cfg, np.random.default_rng(4))
    tokens = np.array([[0, 1, 2, 3], [4, 3, 2, 1]])
    probs = model.class_probabilities(tokens)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(model.predict_classes(tokens),
                                  np.argmax(probs, axis=1))
    lm = PdeTransformer(small_config(), np.random.default_rng(4))
    with pytest.raises(ConfigError):
        lm.predict_classes(tokens)
    with pytest.raises(ConfigError):
        lm.class_probabilities(tokens)


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config(task=TaskKind.CLASSIFICATION, n_classes=3,
                       attention_variant=AttentionVariant.HYBRID)
    model = PdeTransformer(cfg, np.random.default_rng(9))
    path = tmp_path / "model.npz"
    model.save(path)
    again = PdeTransformer.load(path)
    assert again.config == model.config
    assert set(again.params) == set(model.params)
    for key in model.params:
        np.testing.assert_array_equal(again.params[key], model.params[key])
    tokens = np.array([[0, 1, 2, 3]])
    np.testing.assert_array_equal(again.forward(tokens), model.forward(tokens))


def test_checkpoint_rejects_unknown_version(tmp_path):
    import json

    model = PdeTransformer(small_config(), np.random.default_rng(0))
    path = tmp_path / "model.npz"
    model.save(path)
    with np.load(path) as bundle:
        payload = {k: bundle[k] for k in bundle.files}
    meta = json.loads(bytes(payload["__config__"]).decode("utf-8"))
    meta["version"] = CHECKPOINT_VERSION + 1
    payload["__config__"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    bad = tmp_path / "bad.npz"
    np.savez(bad, **payload)
    with pytest.raises(ConfigError):
        PdeTransformer.load(bad)
