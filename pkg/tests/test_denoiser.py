import numpy as np
import pytest

from compvid.denoiser import (
    CROSSATTN,
    DenoiserSpec,
    backward,
    forward,
    init_params,
    video_positions,
)
from compvid.layout import TokenGrid
from compvid.maskattn import MaskSemantics


@pytest.fixture(scope="module")
def tiny():
    spec = DenoiserSpec(layers=2, d_model=8, heads=2, weight_seed=0)
    grid = TokenGrid(1, 2, 2)
    params = init_params(spec, channels=3, d_text=5)
    rng = np.random.default_rng(0)
    latent = rng.normal(size=(2, grid.n_video, 3))
    text = rng.normal(size=(2, 3, 5))
    step_frac = np.array([0.2, 0.7])
    return spec, grid, params, latent, text, step_frac


class TestSpec:
    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            DenoiserSpec(d_model=10, heads=4)

    def test_default_shape(self):
        spec = DenoiserSpec()
        assert (spec.layers, spec.d_model, spec.heads, spec.d_head) == (4, 64, 4, 16)


class TestForward:
    def test_deterministic_weights_and_output(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        again = init_params(spec, channels=3, d_text=5)
        for key, val in params.items():
            assert (val == again[key]).all()
        a = forward(params, spec, latent, text, sf, grid)
        b = forward(params, spec, latent, text, sf, grid)
        assert (a == b).all()

    def test_output_shape_and_finite(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        eps = forward(params, spec, latent, text, sf, grid)
        assert eps.shape == latent.shape
        assert np.isfinite(eps).all()

    def test_text_conditioning_matters(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        a = forward(params, spec, latent, text, sf, grid)
        b = forward(params, spec, latent, np.zeros_like(text), sf, grid)
        assert not np.allclose(a, b)

    def test_step_conditioning_matters(self, tiny):
        spec, grid, params, latent, text, _ = tiny
        a = forward(params, spec, latent, text, 0.1, grid)
        b = forward(params, spec, latent, text, 0.9, grid)
        assert not np.allclose(a, b)

    def test_all_ones_mask_matches_unmasked(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        n = grid.n_video + text.shape[1]
        provider = lambda layer, q, k: np.ones((n, n), dtype=bool)
        masked = forward(params, spec, latent, text, sf, grid,
                         mask_provider=provider, semantics=MaskSemantics())
        plain = forward(params, spec, latent, text, sf, grid)
        np.testing.assert_allclose(masked, plain, atol=1e-12)

    def test_mask_changes_output(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        n = grid.n_video + text.shape[1]
        bits = np.eye(n, dtype=bool)
        provider = lambda layer, q, k: bits
        masked = forward(params, spec, latent, text, sf, grid,
                         mask_provider=provider, semantics=MaskSemantics())
        plain = forward(params, spec, latent, text, sf, grid)
        assert not np.allclose(masked, plain)

    def test_provider_sees_every_layer(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        seen = []

        def provider(layer, q_avg, k_avg):
            seen.append(layer)
            assert q_avg.shape == (2, grid.n_video + text.shape[1], spec.d_head)
            return None

        forward(params, spec, latent, text, sf, grid, mask_provider=provider)
        assert seen == list(range(spec.layers))

    def test_video_positions_distinguish_tokens(self):
        spec = DenoiserSpec()
        pos = video_positions(spec, TokenGrid(2, 3, 3))
        assert pos.shape == (18, spec.d_model)
        # no two tokens share a positional vector
        dists = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        np.fill_diagonal(dists, 1.0)
        assert dists.min() > 1e-6


class TestCrossattnForward:
    def test_runs_and_finite(self):
        spec = DenoiserSpec(layers=2, d_model=8, heads=2, weight_seed=1)
        grid = TokenGrid(2, 2, 2)
        params = init_params(spec, mode=CROSSATTN, channels=3, d_text=5)
        rng = np.random.default_rng(1)
        latent = rng.normal(size=(1, grid.n_video, 3))
        text = rng.normal(size=(1, 4, 5))
        eps = forward(params, spec, latent, text, 0.3, grid, mode=CROSSATTN)
        assert eps.shape == latent.shape
        assert np.isfinite(eps).all()

    def test_open_masks_match_unmasked(self):
        spec = DenoiserSpec(layers=2, d_model=8, heads=2, weight_seed=1)
        grid = TokenGrid(2, 2, 2)
        params = init_params(spec, mode=CROSSATTN, channels=3, d_text=5)
        rng = np.random.default_rng(2)
        latent = rng.normal(size=(1, grid.n_video, 3))
        text = rng.normal(size=(1, 4, 5))
        hw = grid.height * grid.width
        open_masks = (
            np.ones((grid.frames, hw, hw), dtype=bool),
            np.ones((grid.frames, hw, 4), dtype=bool),
        )
        masked = forward(params, spec, latent, text, 0.3, grid, mode=CROSSATTN,
                         mask_provider=lambda l, q, k: open_masks)
        plain = forward(params, spec, latent, text, 0.3, grid, mode=CROSSATTN)
        np.testing.assert_allclose(masked, plain, atol=1e-12)

    def test_frame_locality_of_self_attention(self):
        # with cross-attention weights zeroed, a frame-1 perturbation cannot
        # reach frame-0 outputs because self-attention is frame-local
        spec = DenoiserSpec(layers=2, d_model=8, heads=2, weight_seed=3)
        grid = TokenGrid(2, 2, 2)
        params = init_params(spec, mode=CROSSATTN, channels=3, d_text=5)
        for i in range(spec.layers):
            params[f"blk{i}.co"] = np.zeros_like(params[f"blk{i}.co"])
        rng = np.random.default_rng(3)
        latent = rng.normal(size=(1, grid.n_video, 3))
        text = rng.normal(size=(1, 4, 5))
        base = forward(params, spec, latent, text, 0.5, grid, mode=CROSSATTN)
        bumped = latent.copy()
        bumped[0, 5] += 1.0  # token in frame 1
        out = forward(params, spec, bumped, text, 0.5, grid, mode=CROSSATTN)
        hw = grid.height * grid.width
        np.testing.assert_allclose(out[0, :hw], base[0, :hw], atol=1e-12)
        assert not np.allclose(out[0, hw:], base[0, hw:])


class TestBackward:
    def test_matches_finite_differences(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        rng = np.random.default_rng(4)
        target = rng.normal(size=latent.shape)

        def loss(p):
            eps = forward(p, spec, latent, text, sf, grid)
            return 0.5 * np.sum((eps - target) ** 2)

        eps, cache = forward(params, spec, latent, text, sf, grid, want_cache=True)
        grads = backward(params, spec, cache, eps - target)
        h = 1e-6
        pick = np.random.default_rng(5)
        for key in params:
            flat = params[key].ravel()
            for j in pick.choice(params[key].size, size=min(4, params[key].size), replace=False):
                orig = flat[j]
                flat[j] = orig + h
                lp = loss(params)
                flat[j] = orig - h
                lm = loss(params)
                flat[j] = orig
                fd = (lp - lm) / (2 * h)
                an = grads[key].ravel()[j]
                assert abs(fd - an) <= 1e-6 + 1e-4 * (abs(fd) + abs(an)), (
                    f"{key}[{j}]: finite-diff {fd} vs analytic {an}"
                )

    def test_cache_forward_matches_plain(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        plain = forward(params, spec, latent, text, sf, grid)
        cached, _ = forward(params, spec, latent, text, sf, grid, want_cache=True)
        assert (plain == cached).all()

    def test_masked_forward_refuses_cache(self, tiny):
        spec, grid, params, latent, text, sf = tiny
        provider = lambda layer, q, k: None
        with pytest.raises(ValueError):
            forward(params, spec, latent, text, sf, grid,
                    mask_provider=provider, want_cache=True)
