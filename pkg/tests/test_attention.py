import numpy as np
import pytest

from app.core.errors import DimensionError, GeometryError, PartitionError
from app.core.tensor import Tensor, precision, softmax_lastdim
from app.models.attention import ConstraintMode, MaskLevel, MaskPlacement, ObjectMask, ReweightConfig
from app.models.denoiser import AttentionKind, AttentionSite
from app.models.prompt import PromptPair
from app.services.attention_service import (
    AttentionRecorder, build_pyramid, constrain_cross, constrain_self, cross_weights, make_transform,
    reweight_cross, spurious_mass,
)
from app.services.tokenizer_service import tokenize


def site(kind, size=4, layer=0):
    return AttentionSite(layer_index=layer, kind=kind, resolution=(size, size))


def level_from(hard, soft=None):
    hard = np.asarray(hard, dtype=np.uint8).reshape(-1)
    soft = hard.astype(np.float64) if soft is None else np.asarray(soft, dtype=np.float64).reshape(-1)
    side = int(np.sqrt(hard.size))
    return MaskLevel(resolution=(side, side), hard=hard, soft=soft)


def random_probs(rng, heads, rows, cols):
    return softmax_lastdim(Tensor(rng.standard_normal((heads, rows, cols))))


@pytest.fixture(autouse=True)
def float64():
    with precision(np.float64):
        yield


class TestPyramid:
    def test_levels_per_resolution(self):
        values = np.zeros((8, 8), dtype=np.uint8)
        values[:4, :4] = 1
        pyr = build_pyramid(ObjectMask(values), [site(AttentionKind.SELF, 8), site(AttentionKind.CROSS, 8),
                                                 site(AttentionKind.SELF, 4), site(AttentionKind.SELF, 2)])
        assert set(pyr.levels) == {(8, 8), (4, 4), (2, 2)}
        assert pyr.levels[(2, 2)].hard.tolist() == [1, 0, 0, 0]
        assert np.array_equal(pyr.levels[(8, 8)].hard, values.reshape(-1))

    def test_half_covered_block_is_inside(self):
        values = np.zeros((2, 2), dtype=np.uint8)
        values[0, :] = 1
        level = build_pyramid(ObjectMask(values), [site(AttentionKind.SELF, 1)]).levels[(1, 1)]
        assert level.soft.tolist() == [0.5]
        assert level.hard.tolist() == [1]

    def test_matches_block_average(self, rng):
        values = (rng.random((16, 16)) < 0.4).astype(np.uint8)
        level = build_pyramid(ObjectMask(values), [site(AttentionKind.SELF, 8)]).levels[(8, 8)]
        expected = np.zeros((8, 8))
        for y in range(8):
            for x in range(8):
                expected[y, x] = values[2 * y:2 * y + 2, 2 * x:2 * x + 2].sum() / 4.0
        assert np.allclose(level.soft.reshape(8, 8), expected)
        assert np.array_equal(level.hard.reshape(8, 8), (expected >= 0.5).astype(np.uint8))

    def test_indivisible_resolution(self):
        with pytest.raises(GeometryError):
            build_pyramid(ObjectMask(np.ones((8, 8), dtype=np.uint8)), [site(AttentionKind.SELF, 3)])

    def test_missing_level(self):
        pyr = build_pyramid(ObjectMask(np.ones((8, 8), dtype=np.uint8)), [site(AttentionKind.SELF, 8)])
        with pytest.raises(GeometryError):
            pyr.entry(site(AttentionKind.SELF, 4))


class TestCross:
    def test_hand_example(self):
        M = Tensor([[[0.2, 0.3, 0.5], [0.1, 0.6, 0.3]]])
        level = MaskLevel(resolution=(2, 1), hard=np.array([1, 0], dtype=np.uint8), soft=np.array([1.0, 0.0]))
        out = constrain_cross(M, level, [1], [2], 0, ConstraintMode.HARD)
        assert np.allclose(out.data, [[[0.0, 0.3, 0.0], [0.0, 0.0, 0.3]]])

    def test_exact_per_entry(self, rng):
        for _ in range(1000):
            rows = 4
            hard = (rng.random(rows) < 0.5).astype(np.uint8)
            level = MaskLevel(resolution=(2, 2), hard=hard, soft=hard.astype(np.float64))
            M = random_probs(rng, 2, rows, 5)
            out = constrain_cross(M, level, [1, 2], [3, 4], 0, ConstraintMode.HARD).data
            p = int(rng.integers(rows))
            j = int(rng.integers(5))
            if j == 0:
                expected = 0.0
            elif j in (1, 2):
                expected = M.data[0, p, j] * hard[p]
            else:
                expected = M.data[0, p, j] * (1 - hard[p])
            assert out[0, p, j] == expected

    def test_no_spurious_mass(self, rng):
        hard = np.array([1, 1, 0, 0, 1, 0, 0, 0, 1], dtype=np.uint8)
        level = MaskLevel(resolution=(3, 3), hard=hard, soft=hard.astype(np.float64))
        out = constrain_cross(random_probs(rng, 2, 9, 7), level, [1, 2, 3], [4, 5, 6], 0, ConstraintMode.HARD)
        assert spurious_mass(out.data, level, [1, 2, 3], [4, 5, 6]) == (0.0, 0.0)

    def test_rows_not_renormalized(self, rng):
        level = level_from([1, 0, 1, 0])
        out = constrain_cross(random_probs(rng, 1, 4, 5), level, [1, 2], [3, 4], 0, ConstraintMode.HARD)
        assert (out.data.sum(axis=-1) < 1.0).all()

    def test_token_only_equals_hard(self, rng):
        level = level_from([1, 0, 1, 1])
        M = random_probs(rng, 2, 4, 5)
        a = constrain_cross(M, level, [1, 2], [3, 4], 0, ConstraintMode.HARD).data
        b = constrain_cross(M, level, [1, 2], [3, 4], 0, ConstraintMode.TOKEN_ONLY).data
        assert np.array_equal(a, b)

    def test_soft_mode_uses_hard_mask(self, rng):
        level = level_from([1, 0, 1, 1], soft=[0.75, 0.25, 0.5, 1.0])
        M = random_probs(rng, 2, 4, 5)
        soft = constrain_cross(M, level, [1, 2], [3, 4], 0, ConstraintMode.SOFT).data
        hard = constrain_cross(M, level, [1, 2], [3, 4], 0, ConstraintMode.HARD).data
        assert np.array_equal(soft, hard)

    def test_none_mode_returns_input(self, rng):
        M = random_probs(rng, 1, 4, 5)
        assert constrain_cross(M, level_from([1, 0, 0, 0]), [1, 2], [3, 4], 0, ConstraintMode.NONE) is M

    def test_overlapping_partition(self):
        with pytest.raises(PartitionError):
            cross_weights(level_from([1, 0, 0, 0]), [1, 2], [2, 3], 0, 5)
        with pytest.raises(PartitionError):
            cross_weights(level_from([1, 0, 0, 0]), [0, 1], [2, 3], 0, 5)

    def test_row_count_mismatch(self, rng):
        with pytest.raises(DimensionError):
            constrain_cross(random_probs(rng, 1, 9, 5), level_from([1, 0, 0, 0]), [1, 2], [3, 4], 0,
                            ConstraintMode.HARD)


class TestSelf:
    def test_all_inside(self, rng):
        M = random_probs(rng, 2, 4, 4)
        out = constrain_self(M, level_from([1, 1, 1, 1]), ConstraintMode.HARD)
        assert np.array_equal(out.data, M.data)

    def test_severs_inside_outside(self, rng):
        hard = [1, 1, 0, 0]
        out = constrain_self(random_probs(rng, 2, 4, 4), level_from(hard), ConstraintMode.HARD).data
        inside = np.array(hard, dtype=bool)
        assert (out[:, inside][:, :, ~inside] == 0).all()
        assert (out[:, ~inside][:, :, inside] == 0).all()

    def test_checkerboard(self, rng):
        hard = (np.indices((4, 4)).sum(axis=0) % 2).reshape(-1)
        M = random_probs(rng, 2, 16, 16)
        out = constrain_self(M, level_from(hard), ConstraintMode.HARD).data
        expected = M.data.copy()
        for p in range(16):
            for q in range(16):
                if hard[p] != hard[q]:
                    expected[:, p, q] = 0.0
        assert np.array_equal(out, expected)

    def test_soft_rows(self, rng):
        level = level_from([1, 0, 0, 1], soft=[0.75, 0.25, 0.0, 1.0])
        M = random_probs(rng, 1, 4, 4)
        out = constrain_self(M, level, ConstraintMode.SOFT).data
        assert out[0, 0, 0] == pytest.approx(0.75 * M.data[0, 0, 0])
        assert out[0, 0, 1] == pytest.approx(0.25 * M.data[0, 0, 1])
        assert out[0, 1, 3] == pytest.approx(0.25 * M.data[0, 1, 3])

    def test_token_only_leaves_self_maps(self, rng):
        M = random_probs(rng, 1, 4, 4)
        assert constrain_self(M, level_from([1, 0, 0, 0]), ConstraintMode.TOKEN_ONLY) is M

    def test_non_square(self, rng):
        with pytest.raises(DimensionError):
            constrain_self(random_probs(rng, 1, 4, 5), level_from([1, 0, 0, 0]), ConstraintMode.HARD)


class TestHardModeExactness:
    def test_random_maps_both_kinds(self, rng):
        for draw in range(1000):
            side = int(rng.integers(1, 5))
            rows = side * side
            hard = (rng.random(rows) < rng.random()).astype(np.uint8)
            level = MaskLevel(resolution=(side, side), hard=hard, soft=hard.astype(np.float64))
            inside = hard.astype(bool)
            if draw % 2:
                budget = int(rng.integers(1, 4))
                cols = 1 + 2 * budget
                order = rng.permutation(np.arange(1, cols))
                j_in, j_out = sorted(order[:budget].tolist()), sorted(order[budget:].tolist())
                M = random_probs(rng, 2, rows, cols)
                out = constrain_cross(M, level, j_in, j_out, 0, ConstraintMode.HARD).data
                allowed = np.zeros((rows, cols), dtype=bool)
                allowed[:, j_in] = inside[:, None]
                allowed[:, j_out] = ~inside[:, None]
                assert (out[:, :, 0] == 0.0).all()
            else:
                M = random_probs(rng, 2, rows, rows)
                out = constrain_self(M, level, ConstraintMode.HARD).data
                allowed = inside[:, None] == inside[None, :]
            assert (out[:, ~allowed] == 0.0).all()
            assert np.array_equal(out[:, allowed], M.data[:, allowed])


class TestReweight:
    def test_identity_scale(self, rng):
        M = random_probs(rng, 1, 4, 5)
        assert reweight_cross(M, ReweightConfig(scale=1.0, target=(1,))) is M

    def test_scales_target_columns_only(self, rng):
        M = random_probs(rng, 1, 4, 5)
        out = reweight_cross(M, ReweightConfig(scale=2.0, target=(1, 3))).data
        assert np.allclose(out[..., [1, 3]], 2.0 * M.data[..., [1, 3]])
        assert np.array_equal(out[..., [0, 2, 4]], M.data[..., [0, 2, 4]])

    def test_may_exceed_one(self):
        out = reweight_cross(Tensor([[[0.1, 0.9]]]), ReweightConfig(scale=2.0, target=(1,))).data
        assert out[0, 0, 1] == pytest.approx(1.8)

    def test_composition_order(self, rng, vocab):
        prompt = tokenize(PromptPair.parse("red circle|solid background"), vocab, 2)
        values = np.zeros((4, 4), dtype=np.uint8)
        values[1:3, 1:3] = 1
        s = site(AttentionKind.CROSS)
        pyramid = build_pyramid(ObjectMask(values), [s])
        reweight = ReweightConfig(scale=3.0, target=(2,))
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD, reweight)
        M = random_probs(rng, 2, 16, prompt.length)
        expected = M.data.copy()
        expected[..., 2] *= 3.0
        expected *= cross_weights(pyramid.levels[(4, 4)], prompt.j_in, prompt.j_out, 0, prompt.length)
        assert np.allclose(hook(s, M).data, expected)

    def test_bad_column(self, rng):
        with pytest.raises(PartitionError):
            reweight_cross(random_probs(rng, 1, 4, 5), ReweightConfig(scale=2.0, target=(5,)))


class TestTransform:
    @pytest.fixture
    def prompt(self, vocab):
        return tokenize(PromptPair.parse("red circle|solid background"), vocab, 2)

    @pytest.fixture
    def pyramid(self):
        values = np.zeros((4, 4), dtype=np.uint8)
        values[:2, :] = 1
        return build_pyramid(ObjectMask(values), [site(AttentionKind.SELF), site(AttentionKind.CROSS)])

    def test_mode_none_is_identity(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.NONE)
        M = random_probs(rng, 2, 16, prompt.length)
        assert hook(site(AttentionKind.CROSS), M) is M
        S = random_probs(rng, 2, 16, 16)
        assert hook(site(AttentionKind.SELF), S) is S

    def test_counts_calls(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD)
        for _ in range(3):
            hook(site(AttentionKind.CROSS), random_probs(rng, 2, 16, prompt.length))
        hook(site(AttentionKind.SELF), random_probs(rng, 2, 16, 16))
        assert hook.counts[AttentionKind.CROSS] == 3 and hook.counts[AttentionKind.SELF] == 1
        assert hook.calls == 4
        hook.reset_counts()
        assert hook.calls == 0

    def test_disabled_hook_passes_through(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD)
        hook.enabled = False
        M = random_probs(rng, 2, 16, prompt.length)
        assert hook(site(AttentionKind.CROSS), M) is M
        assert hook.calls == 1

    def test_recorder_sees_zero_mass_in_hard_mode(self, rng, prompt, pyramid):
        recorder = AttentionRecorder(keep_heatmaps=True)
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD, recorder=recorder)
        for _ in range(4):
            hook(site(AttentionKind.CROSS), random_probs(rng, 2, 16, prompt.length))
        assert recorder.drain() == (0.0, 0.0)
        maps = recorder.heatmaps()[(4, 4)]
        assert set(maps) == set(range(prompt.length))
        assert (maps[prompt.j_in[0]][2:, :] == 0).all()

    def test_recorder_sees_mass_without_constraint(self, rng, prompt, pyramid):
        recorder = AttentionRecorder()
        hook = make_transform(pyramid, prompt, ConstraintMode.NONE, recorder=recorder)
        hook(site(AttentionKind.CROSS), random_probs(rng, 2, 16, prompt.length))
        inside_out, outside_in = recorder.drain()
        assert inside_out > 0 and outside_in > 0
        assert recorder.drain() == (0.0, 0.0)

    def test_renormalized_rows(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD, placement=MaskPlacement.PRE_SOFTMAX)
        out = hook(site(AttentionKind.SELF), random_probs(rng, 2, 16, 16)).data
        assert np.allclose(out.sum(axis=-1), 1.0)

    def test_idempotent(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD)
        for kind, cols in ((AttentionKind.CROSS, prompt.length), (AttentionKind.SELF, 16)):
            once = hook(site(kind), random_probs(rng, 2, 16, cols))
            twice = hook(site(kind), once)
            assert np.array_equal(once.data, twice.data)

    def test_residual_mass_shrinks_with_mask(self, rng, prompt):
        M = random_probs(rng, 2, 16, prompt.length)
        small = np.zeros((4, 4), dtype=np.uint8)
        small[:1, :] = 1
        large = np.zeros((4, 4), dtype=np.uint8)
        large[:3, :] = 1
        masses = []
        for values in (small, large):
            pyr = build_pyramid(ObjectMask(values), [site(AttentionKind.CROSS)])
            out = make_transform(pyr, prompt, ConstraintMode.HARD)(site(AttentionKind.CROSS), M).data
            masses.append(out[..., list(prompt.j_in)].sum())
        assert masses[0] <= masses[1]

    def test_resolution_mismatch(self, rng, prompt, pyramid):
        hook = make_transform(pyramid, prompt, ConstraintMode.HARD)
        with pytest.raises(GeometryError):
            hook(site(AttentionKind.CROSS, size=8), random_probs(rng, 2, 64, prompt.length))
