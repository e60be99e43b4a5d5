import numpy as np
import pytest

from compvid.errors import NumericDomainError
from compvid.kernel import softmax_rows
from compvid.layout import TokenGrid
from compvid.maskattn import (
    ADDITIVE,
    MULTIPLICATIVE,
    JointAttentionMask,
    MaskSemantics,
    build_fused_mask,
    context_mask,
    crossattn_masks,
    fuse_masks,
    masked_attention,
    subject_mask,
)

from .oracles import oracle_attention, oracle_joint_mask, oracle_mask_predicate


def random_instance(rng, n_video=None, n_text=None, m=None):
    n_video = n_video or int(rng.integers(4, 24))
    n_text = n_text or int(rng.integers(2, 10))
    m = m if m is not None else int(rng.integers(0, 4))
    video = rng.random((m, n_video)) < 0.35
    text = rng.random((m, n_text)) < 0.35
    return video, text, n_video, n_text


class TestSubjectMask:
    def test_singleton_outer_product(self):
        video = np.array([[True]])
        text = np.array([[True]])
        mask = subject_mask(video, text)
        assert mask.vv[0, 0] and mask.vt[0, 0] and mask.tv[0, 0] and mask.tt[0, 0]

    def test_disjoint_subjects_block_diagonal(self):
        video = np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=bool)
        text = np.array([[1, 0], [0, 1]], dtype=bool)
        mask = subject_mask(video, text)
        assert mask.vv[0, 1] and mask.vv[2, 3]
        assert not mask.vv[0, 2] and not mask.vv[1, 3]
        assert mask.vt[0, 0] and not mask.vt[0, 1]
        assert mask.vt[2, 1] and not mask.vt[2, 0]

    def test_overlap_attends_to_both_regions(self):
        rng = np.random.default_rng(0)
        video = np.array([[1, 1, 1, 0, 0], [0, 0, 1, 1, 1]], dtype=bool)
        text = np.array([[1, 0], [0, 1]], dtype=bool)
        mask = subject_mask(video, text)
        # token 2 in both regions reaches every region token and both subjects' text
        assert mask.vv[2].tolist() == [True] * 5
        assert mask.vt[2].all()
        for p in range(5):
            for q in range(5):
                want = any(video[i, p] and video[i, q] for i in range(2))
                assert mask.vv[p, q] == want

    def test_subject_count_mismatch(self):
        with pytest.raises(ValueError):
            subject_mask(np.ones((2, 4), dtype=bool), np.ones((1, 3), dtype=bool))


class TestContextMask:
    def test_fully_covered_is_all_zero(self):
        video = np.array([[1, 1], [0, 0]], dtype=bool) | np.array([[0, 0], [1, 1]], dtype=bool)
        text = np.ones((2, 3), dtype=bool)
        mask = context_mask(video, text)
        assert not mask.bits.any()

    def test_no_subjects_all_ones(self):
        mask = context_mask(np.zeros((0, 5), dtype=bool), np.zeros((0, 3), dtype=bool))
        assert mask.bits.all()

    def test_background_row_open(self):
        video = np.array([[0, 1, 1]], dtype=bool)
        text = np.array([[1, 0]], dtype=bool)
        mask = context_mask(video, text)
        assert mask.bits[0].all()          # background video token
        assert not mask.bits[1].any()      # covered video token
        assert mask.bits[4].all()          # non-subject text token

    def test_symmetric_opens_columns(self):
        video = np.array([[0, 1]], dtype=bool)
        text = np.array([[1]], dtype=bool)
        asym = context_mask(video, text, context_symmetric=False)
        sym = context_mask(video, text, context_symmetric=True)
        assert not asym.bits[1, 0]
        assert sym.bits[1, 0]


class TestFuseMasks:
    def test_or_semantics(self):
        rng = np.random.default_rng(1)
        video, text, nv, nt = random_instance(rng, m=2)
        s = subject_mask(video, text)
        c = context_mask(video, text)
        f = fuse_masks(s, c)
        assert (f.bits == (s.bits | c.bits)).all()

    def test_matches_pair_rule_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            video, text, nv, nt = random_instance(rng)
            for sym in (False, True):
                got = fuse_masks(subject_mask(video, text), context_mask(video, text, sym)).bits
                want = np.array(oracle_joint_mask(video, text, nv, nt, sym), dtype=bool)
                assert (got == want).all()

    def test_exhaustive_block_soundness_small(self):
        # every pair bit equals the prose predicate, for joint sizes <= 64
        rng = np.random.default_rng(3)
        for _ in range(10):
            video, text, nv, nt = random_instance(rng, n_video=int(rng.integers(4, 50)),
                                                  n_text=int(rng.integers(2, 14)))
            if nv + nt > 64:
                continue
            sem = MaskSemantics(context_symmetric=bool(rng.integers(2)))
            mask = build_fused_mask(video, text, sem)
            for p in range(nv + nt):
                for q in range(nv + nt):
                    assert mask.bits[p, q] == oracle_mask_predicate(
                        p, q, video, text, nv, sem.context_symmetric
                    )

    def test_subject_relabeling_invariance(self):
        rng = np.random.default_rng(4)
        video, text, nv, nt = random_instance(rng, m=3)
        sem = MaskSemantics()
        base = build_fused_mask(video, text, sem).bits
        perm = [2, 0, 1]
        permuted = build_fused_mask(video[perm], text[perm], sem).bits
        assert (base == permuted).all()


class TestMaskedAttention:
    def _qkv(self, rng, n, d=8):
        return rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d))

    def test_all_ones_equals_plain_attention(self):
        rng = np.random.default_rng(5)
        q, k, v = self._qkv(rng, 10)
        mask = JointAttentionMask(6, 4, np.ones((10, 10), dtype=bool))
        got = masked_attention(q, k, v, mask)
        plain = softmax_rows(q @ k.T / np.sqrt(8)) @ v
        np.testing.assert_allclose(got, plain, atol=1e-12)

    def test_open_rows_match_plain_attention(self):
        rng = np.random.default_rng(6)
        q, k, v = self._qkv(rng, 9)
        bits = rng.random((9, 9)) < 0.4
        bits[3] = True
        out = masked_attention(q, k, v, JointAttentionMask(5, 4, bits))
        plain = softmax_rows(q @ k.T / np.sqrt(8)) @ v
        np.testing.assert_allclose(out[3], plain[3], atol=1e-12)

    def test_disallowed_weight_below_1e9(self):
        rng = np.random.default_rng(7)
        n = 12
        q, k, v = self._qkv(rng, n)
        bits = rng.random((n, n)) < 0.5
        np.fill_diagonal(bits, True)
        logits = q @ k.T / np.sqrt(8)
        from compvid.maskattn import apply_mask_to_logits
        weights = softmax_rows(apply_mask_to_logits(logits, bits, ADDITIVE))
        assert weights[~bits].max() < 1e-9

    def test_matches_renormalized_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(3, 14))
            q, k, v = self._qkv(rng, n, d=6)
            bits = rng.random((n, n)) < 0.45
            got = masked_attention(q, k, v, JointAttentionMask(n, 0, bits))
            want = oracle_attention(q.tolist(), k.tolist(), v.tolist(),
                                    lambda p, c: bool(bits[p, c]))
            np.testing.assert_allclose(got, np.array(want), atol=1e-9)

    def test_empty_row_self_fallback(self):
        rng = np.random.default_rng(9)
        q, k, v = self._qkv(rng, 5)
        bits = np.zeros((5, 5), dtype=bool)
        bits[0] = True
        out = masked_attention(q, k, v, JointAttentionMask(5, 0, bits))
        for p in range(1, 5):
            np.testing.assert_allclose(out[p], v[p], atol=1e-12)

    def test_single_allowed_column_returns_value_row(self):
        rng = np.random.default_rng(10)
        q, k, v = self._qkv(rng, 6)
        bits = np.zeros((6, 6), dtype=bool)
        for p in range(6):
            bits[p, (p + 1) % 6] = True
        out = masked_attention(q, k, v, JointAttentionMask(6, 0, bits))
        for p in range(6):
            np.testing.assert_allclose(out[p], v[(p + 1) % 6], atol=1e-12)

    def test_convex_combination_of_allowed_values(self):
        rng = np.random.default_rng(11)
        n = 10
        q, k, _ = self._qkv(rng, n)
        bits = rng.random((n, n)) < 0.4
        np.fill_diagonal(bits, True)
        # with V = identity the outputs are exactly the attention weights
        weights = masked_attention(q, k, np.eye(n), JointAttentionMask(n, 0, bits))
        np.testing.assert_allclose(weights.sum(axis=1), np.ones(n), atol=1e-9)
        assert (weights >= 0).all()
        assert weights[~bits].max() < 1e-9

    def test_multiplicative_mode_literal_product(self):
        rng = np.random.default_rng(12)
        q, k, v = self._qkv(rng, 7)
        bits = rng.random((7, 7)) < 0.5
        np.fill_diagonal(bits, True)
        got = masked_attention(q, k, v, JointAttentionMask(7, 0, bits),
                               MaskSemantics(mode=MULTIPLICATIVE))
        want = softmax_rows((q @ k.T / np.sqrt(8)) * bits) @ v
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_multiplicative_mode_leaks_mass(self):
        # zeroed logits still carry exp(0)=1 weight, the reason additive is default
        q = np.ones((2, 4))
        k = np.ones((2, 4))
        v = np.eye(2, 4)
        bits = np.array([[True, False], [False, True]])
        out = masked_attention(q, k, v, JointAttentionMask(2, 0, bits),
                               MaskSemantics(mode=MULTIPLICATIVE))
        assert out[0, 1] > 0.1

    def test_non_finite_rejected(self):
        q = np.full((3, 2), np.nan)
        with pytest.raises(NumericDomainError):
            masked_attention(q, np.ones((3, 2)), np.ones((3, 2)),
                             JointAttentionMask(3, 0, np.ones((3, 3), dtype=bool)))


class TestCrossattnMasks:
    def test_full_frame_subject_opens_self_mask(self):
        grid = TokenGrid(2, 2, 2)
        video = np.zeros((1, grid.n_video), dtype=bool)
        video[0, :4] = True  # subject covers frame 0 entirely
        text = np.array([[1, 0, 0]], dtype=bool)
        self_masks, cross_masks = crossattn_masks(video, text, grid)
        assert self_masks[0].all()
        assert self_masks[1].all()  # frame 1 is all background

    def test_background_rows_all_ones(self):
        grid = TokenGrid(1, 2, 2)
        video = np.array([[1, 0, 0, 0]], dtype=bool)
        text = np.array([[1, 0]], dtype=bool)
        self_masks, cross_masks = crossattn_masks(video, text, grid)
        for p in range(1, 4):
            assert self_masks[0, p].all()
            assert cross_masks[0, p].all()
        assert cross_masks[0, 0].tolist() == [True, False]
        assert self_masks[0, 0].tolist() == [True, False, False, False]

    def test_matches_joint_mask_slice_for_frame_local_subjects(self):
        rng = np.random.default_rng(13)
        grid = TokenGrid(3, 3, 3)
        hw = 9
        video = np.zeros((2, grid.n_video), dtype=bool)
        # subject 0 lives in frame 0, subject 1 in frame 2
        video[0, rng.choice(hw, 4, replace=False)] = True
        video[1, 2 * hw + rng.choice(hw, 3, replace=False)] = True
        text = np.array([[1, 1, 0, 0], [0, 0, 1, 0]], dtype=bool)
        joint = build_fused_mask(video, text, MaskSemantics())
        self_masks, cross_masks = crossattn_masks(video, text, grid)
        for f in range(3):
            sl = slice(f * hw, (f + 1) * hw)
            assert (self_masks[f] == joint.vv[sl, sl]).all()
            assert (cross_masks[f] == joint.vt[sl, :]).all()
