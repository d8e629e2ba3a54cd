from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbgan.models import LayerSpec, ModelSpec
from pbgan.piggyback import (FilterBank, PiggybackError, TaskLayerParams,
                             compose_filters, expand_bank, param_count,
                             partition_channels, reshape_R, reshape_R_inv)
from pbgan.rng import rng_stream


class TestReshape:
    def test_shape(self):
        m = reshape_R(np.zeros((3, 3, 4, 8)))
        assert m.shape == (36, 8)

    def test_minimal(self):
        m = reshape_R(np.full((1, 1, 1, 1), 5.0))
        assert m.tolist() == [[5.0]]

    def test_column_is_one_filter(self):
        f = rng_stream(1, "probe").normal(0, 1, (2, 2, 3, 4))
        m = reshape_R(f)
        assert np.array_equal(m[:, 2], f[:, :, :, 2].reshape(-1))

    def test_bad_row_count(self):
        with pytest.raises(PiggybackError):
            reshape_R_inv(np.zeros((35, 8)), 3, 3, 4)

    @settings(max_examples=40, deadline=None)
    @given(kw=st.integers(1, 4), kh=st.integers(1, 4),
           cin=st.integers(1, 5), cout=st.integers(1, 6),
           seed=st.integers(0, 2**31))
    def test_round_trip_bitwise(self, kw, kh, cin, cout, seed):
        f = rng_stream(seed, "probe").normal(0, 1, (kw, kh, cin, cout))
        back = reshape_R_inv(reshape_R(f), kw, kh, cin)
        assert back.tobytes() == f.tobytes()


class TestPartition:
    def test_quarter_of_eight(self):
        p = partition_channels(8, Fraction(1, 4))
        assert (p.n_u, p.n_p) == (2, 6)

    def test_extremes(self):
        assert partition_channels(8, 1).n_u == 8
        assert partition_channels(8, 0).n_u == 0

    def test_tie_rounds_up(self):
        assert partition_channels(6, Fraction(1, 4)).n_u == 2  # 1.5 -> 2

    def test_clamp_low(self):
        # 2 * 1/8 = 0.25 rounds to 0, clamped to keep both sides nonempty
        assert partition_channels(2, Fraction(1, 8)).n_u == 1

    def test_clamp_high(self):
        # 4 * 7/8 = 3.5 -> 4, clamped to c_out - 1
        assert partition_channels(4, Fraction(7, 8)).n_u == 3

    def test_invalid(self):
        with pytest.raises(PiggybackError):
            partition_channels(8, Fraction(3, 2))
        with pytest.raises(PiggybackError):
            partition_channels(0, Fraction(1, 2))

    @settings(max_examples=60, deadline=None)
    @given(c_out=st.integers(1, 64),
           num=st.integers(0, 12), den=st.integers(1, 12))
    def test_partition_invariants(self, c_out, num, den):
        lam = Fraction(num, den)
        if lam > 1:
            return
        p = partition_channels(c_out, lam)
        assert p.n_u + p.n_p == c_out
        assert 0 <= p.n_u <= c_out
        if 0 < lam < 1 and c_out >= 2:
            assert 1 <= p.n_u <= c_out - 1


class TestBank:
    def test_width_and_stacked(self):
        rng = rng_stream(2, "probe")
        b1 = rng.normal(0, 1, (3, 3, 4, 8))
        b2 = rng.normal(0, 1, (3, 3, 4, 2))
        bank = FilterBank(0, [b1, b2], [1, 2])
        assert bank.width == 10
        assert np.array_equal(bank.stacked(8), b1)
        assert bank.stacked().shape == (3, 3, 4, 10)

    def test_stacked_too_wide(self):
        bank = FilterBank(0, [np.zeros((3, 3, 4, 8))], [1])
        with pytest.raises(PiggybackError):
            bank.stacked(9)

    def test_blocks_frozen(self):
        bank = FilterBank(0, [np.zeros((1, 1, 1, 1))], [1])
        with pytest.raises(ValueError):
            bank.blocks[0][0, 0, 0, 0] = 1.0

    def test_expand_appends(self):
        rng = rng_stream(3, "probe")
        b1 = rng.normal(0, 1, (3, 3, 4, 8))
        bank = FilterBank(0, [b1], [1])
        grown = expand_bank(bank, rng.normal(0, 1, (3, 3, 4, 2)), 2)
        assert grown.width == 10
        assert grown.blocks[0].tobytes() == b1.tobytes()
        assert bank.width == 8  # original untouched

    def test_expand_double_append(self):
        bank = FilterBank(0, [np.zeros((3, 3, 4, 8))], [1])
        grown = expand_bank(bank, np.zeros((3, 3, 4, 2)), 2)
        with pytest.raises(PiggybackError):
            expand_bank(grown, np.zeros((3, 3, 4, 2)), 2)

    def test_expand_geometry_mismatch(self):
        bank = FilterBank(0, [np.zeros((3, 3, 4, 8))], [1])
        with pytest.raises(PiggybackError):
            expand_bank(bank, np.zeros((3, 3, 5, 2)), 2)


class TestCompose:
    def test_task1_identity(self):
        unc = rng_stream(4, "probe").normal(0, 1, (3, 3, 4, 8))
        tlp = TaskLayerParams(1, unc, None, np.zeros(8), 0)
        out = compose_filters(FilterBank(0), tlp)
        assert out.tobytes() == unc.tobytes()

    def test_one_hot_selects_bank_filter(self):
        rng = rng_stream(5, "probe")
        block = rng.normal(0, 1, (3, 3, 2, 4))
        bank = FilterBank(0, [block], [1])
        W = np.zeros((4, 2))
        W[3, 0] = 1.0
        W[1, 1] = 1.0
        unc = rng.normal(0, 1, (3, 3, 2, 1))
        tlp = TaskLayerParams(2, unc, W, np.zeros(3), 4)
        out = compose_filters(bank, tlp)
        assert out.shape == (3, 3, 2, 3)
        assert np.array_equal(out[:, :, :, 0], unc[:, :, :, 0])
        assert np.array_equal(out[:, :, :, 1], block[:, :, :, 3])
        assert np.array_equal(out[:, :, :, 2], block[:, :, :, 1])

    def test_prefix_ignores_later_blocks(self):
        rng = rng_stream(6, "probe")
        block = rng.normal(0, 1, (3, 3, 2, 4))
        bank = FilterBank(0, [block], [1])
        W = rng.normal(0, 1, (4, 3))
        unc = rng.normal(0, 1, (3, 3, 2, 1))
        tlp = TaskLayerParams(2, unc, W, np.zeros(4), 4)
        out_before = compose_filters(bank, tlp)
        grown = expand_bank(bank, rng.normal(0, 1, (3, 3, 2, 2)), 2)
        out_after = compose_filters(grown, tlp)
        assert out_before.tobytes() == out_after.tobytes()

    def test_bank_narrower_than_trained(self):
        bank = FilterBank(0, [np.zeros((3, 3, 2, 4))], [1])
        tlp = TaskLayerParams(2, np.zeros((3, 3, 2, 1)), np.zeros((6, 3)),
                              np.zeros(4), 6)
        with pytest.raises(PiggybackError):
            compose_filters(bank, tlp)

    def test_zero_width_unconstrained(self):
        rng = rng_stream(7, "probe")
        block = rng.normal(0, 1, (3, 3, 2, 4))
        bank = FilterBank(0, [block], [1])
        W = rng.normal(0, 1, (4, 4))
        tlp = TaskLayerParams(2, np.zeros((3, 3, 2, 0)), W, np.zeros(4), 4)
        out = compose_filters(bank, tlp)
        expect = reshape_R_inv(reshape_R(block) @ W, 3, 3, 2)
        assert np.array_equal(out, expect)


def one_layer_spec():
    gen = (LayerSpec("conv", 3, 3, 4, 8, 1, 1, "none", "none"),)
    return ModelSpec(name="t", image_size=32, image_channels=3,
                     gen_layers=gen, disc_layers=())


class TestWidthRecurrence:
    @pytest.mark.parametrize("lam", [Fraction(0), Fraction(1, 8),
                                     Fraction(1, 4), Fraction(1, 2), Fraction(1)])
    def test_closed_form_matches_recurrence(self, lam):
        c_out = 8
        n_u = partition_channels(c_out, lam).n_u
        width = c_out  # after task 1 the whole first block is in the bank
        for n in range(2, 6):
            width += n_u
            # W_n mixes width(n-1) bank columns into n_p outputs, and the
            # final filter tensor always spans exactly c_out channels
            w_rows = width - n_u
            assert w_rows == c_out + (n - 2) * n_u
            assert n_u + (c_out - n_u) == c_out


class TestParamCount:
    def test_single_layer_examples(self):
        spec = one_layer_spec()
        lam = Fraction(1, 4)
        assert param_count(spec, 2, lam, "full")["trainable"] == 296
        assert param_count(spec, 2, lam, "piggyback")["trainable"] == 128
        assert param_count(spec, 3, lam, "piggyback")["trainable"] == 140

    def test_task1_equals_full(self):
        spec = one_layer_spec()
        for lam in (Fraction(0), Fraction(1, 4), Fraction(1)):
            full = param_count(spec, 1, lam, "full")["trainable"]
            assert param_count(spec, 1, lam, "piggyback")["trainable"] == full

    def test_pure_factorization_w_only(self):
        spec = one_layer_spec()
        # from task 2 on: W is (8, 8) plus the 8 biases, bank frozen at 8
        c = param_count(spec, 2, Fraction(1, 4), "pure_factorization")
        assert c["trainable"] == 8 * 8 + 8
        c3 = param_count(spec, 5, Fraction(1, 4), "pure_factorization")
        assert c3["trainable"] == 8 * 8 + 8

    def test_lambda_one_matches_full_trainable(self):
        spec = one_layer_spec()
        for n in range(1, 5):
            pb = param_count(spec, n, Fraction(1), "piggyback")["trainable"]
            full = param_count(spec, n, Fraction(1), "full")["trainable"]
            # at lam=1 every channel is unconstrained and W vanishes
            assert pb == full

    def test_stored_monotone(self, spec32):
        lam = Fraction(1, 4)
        for mode in ("full", "piggyback", "pure_factorization"):
            prev = 0
            for n in range(1, 6):
                s = param_count(spec32, n, lam, mode)["stored_cumulative"]
                assert s > prev
                prev = s

    def test_piggyback_stores_less_than_full(self, spec32):
        lam = Fraction(1, 4)
        for n in range(2, 6):
            pb = param_count(spec32, n, lam, "piggyback")["stored_cumulative"]
            full = param_count(spec32, n, lam, "full")["stored_cumulative"]
            assert pb < full

    def test_reference_spec_full_single(self, spec32):
        total = sum(l.kw * l.kh * l.c_in * l.c_out + l.c_out
                    for l in spec32.gen_layers)
        assert param_count(spec32, 1, Fraction(1, 4), "full")["trainable"] == total
        assert total == 92663

    def test_unknown_mode(self, spec32):
        with pytest.raises(PiggybackError):
            param_count(spec32, 1, Fraction(1, 4), "sequential_finetune")


class TestTrainedAccounting:
    def test_generator_trainables_match_closed_form(self, spec32, pb_runs):
        from pbgan.piggyback import trainable_set

        for n, run in enumerate(pb_runs, start=1):
            names = trainable_set(run, n)
            gen_total = sum(arr.size for name, arr in names
                            if name.startswith("g/"))
            expect = param_count(spec32, n, run.lam, "piggyback")["trainable"]
            assert gen_total == expect

    def test_bank_widths_follow_recurrence(self, spec32, pb_runs):
        lam = Fraction(1, 4)
        run3 = pb_runs[-1]
        for (idx, lay), bank in zip(spec32.shared_layers, run3.banks):
            n_u = partition_channels(lay.c_out, lam).n_u
            assert bank.width == lay.c_out + 2 * n_u
