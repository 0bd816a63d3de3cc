"""Toeplitz hashing: indexing convention, universality, masking, extraction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qake import bits as B
from qake import hashing as H
from qake.errors import ConfigError, DimensionError


def bits(*vals):
    return np.array(vals, dtype=np.uint8)


class TestToeplitzHash:
    def test_two_by_two_worked_example(self):
        # T[i][j] = s[i - j + 1] for seed (1,0,1): rows (0,1) and (1,0)
        seed = H.ToeplitzSeed(bits(1, 0, 1), out_len=2, msg_len=2)
        assert H.toeplitz_hash(seed, bits(1, 1)).tolist() == [1, 1]

    def test_zero_message_hashes_to_zero(self, rng):
        seed = H.random_seed(rng, 16, 40)
        assert not H.toeplitz_hash(seed, B.zeros(40)).any()

    def test_matches_dense_matrix_oracle(self, rng):
        for _ in range(400):
            out = int(rng.integers(1, 40))
            m = int(rng.integers(1, 200))
            seed = H.random_seed(rng, out, m)
            msg = B.random_bits(rng, m)
            expect = H.toeplitz_matrix(seed) @ msg % 2
            assert (H.toeplitz_hash(seed, msg) == expect).all()

    def test_long_message_chunked_path(self, rng):
        # crosses several chunk boundaries on both output regimes
        for out in (24, 200):
            seed = H.random_seed(rng, out, 13000)
            msg = B.random_bits(rng, 13000)
            expect = H.toeplitz_matrix(seed) @ msg % 2
            assert (H.toeplitz_hash(seed, msg) == expect).all()

    def test_dimension_mismatch(self, rng):
        seed = H.random_seed(rng, 4, 8)
        with pytest.raises(DimensionError):
            H.toeplitz_hash(seed, B.zeros(9))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 10), st.data())
    def test_linearity(self, out, m, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        seed = H.random_seed(rng, out, m)
        a, b = B.random_bits(rng, m), B.random_bits(rng, m)
        lhs = H.toeplitz_hash(seed, a ^ b)
        rhs = H.toeplitz_hash(seed, a) ^ H.toeplitz_hash(seed, b)
        assert (lhs == rhs).all()

    def test_determinism_across_instances(self, rng):
        seed = H.random_seed(rng, 16, 64)
        msg = B.random_bits(rng, 64)
        again = H.ToeplitzSeed(seed.bits.copy(), 16, 64)
        assert (H.toeplitz_hash(seed, msg) == H.toeplitz_hash(again, msg)).all()


def exhaustive_xor_collision_max(out_len, msg_len):
    """Max over (x1 != x2, c) of Pr_seed[h(x1) xor h(x2) = c]."""
    n_seed_bits = out_len + msg_len - 1
    seeds = np.arange(2**n_seed_bits, dtype=np.uint64)
    worst = 0.0
    for z in range(1, 2**msg_len):
        zbits = [(z >> j) & 1 for j in range(msg_len)]
        values = np.zeros(seeds.size, dtype=np.uint64)
        for i in range(out_len):
            mask = 0
            for j in range(msg_len):
                if zbits[j]:
                    mask |= 1 << (i - j + msg_len - 1)
            sel = seeds & np.uint64(mask)
            parity = np.zeros(seeds.size, dtype=np.uint64)
            for bit in range(n_seed_bits):
                parity ^= (sel >> np.uint64(bit)) & np.uint64(1)
            values |= parity << np.uint64(i)
        counts = np.bincount(values.astype(np.int64), minlength=2**out_len)
        worst = max(worst, counts.max() / seeds.size)
    return worst


class TestUniversality:
    @pytest.mark.parametrize("out_len,msg_len", [(1, 3), (2, 3), (3, 4), (4, 4)])
    def test_xor_universality_exhaustive_small(self, out_len, msg_len):
        # by linearity Pr[h(x1) xor h(x2) = c] = Pr[h(z) = c] for z = x1 xor x2
        assert exhaustive_xor_collision_max(out_len, msg_len) <= 2.0 ** -out_len + 1e-12

    def test_masked_construction_strongly_universal_exhaustive(self):
        # over all (seed, mask): Pr[tag(x) = t] must be exactly 2^-out for all x, t
        out_len, msg_len = 2, 3
        n_seed_bits = out_len + msg_len - 1
        for x in range(2**msg_len):
            xb = bits(*[(x >> j) & 1 for j in range(msg_len)])
            counts = np.zeros(2**out_len, dtype=np.int64)
            for sv in range(2**n_seed_bits):
                sb = bits(*[(sv >> j) & 1 for j in range(n_seed_bits)])
                seed = H.ToeplitzSeed(sb, out_len, msg_len)
                h = H.toeplitz_hash(seed, xb)
                for mv in range(2**out_len):
                    mb = bits(*[(mv >> j) & 1 for j in range(out_len)])
                    tag = H.masked_tag(seed, H.MaskKey(mb), xb)
                    counts[int(tag.value[0]) + 2 * int(tag.value[1])] += 1
            total = 2 ** (n_seed_bits + out_len)
            assert (counts == total // 2**out_len).all()

    def test_monte_carlo_xor_collision_rate(self, rng):
        # fraction of h(m1) xor h(m2) = c hits consistent with <= 2^-8
        hits, trials = 0, 1000
        for _ in range(trials):
            seed = H.random_seed(rng, 8, 8)
            m1 = B.random_bits(rng, 8)
            m2 = B.random_bits(rng, 8)
            while (m1 == m2).all():
                m2 = B.random_bits(rng, 8)
            c = B.random_bits(rng, 8)
            if ((H.toeplitz_hash(seed, m1) ^ H.toeplitz_hash(seed, m2)) == c).all():
                hits += 1
        # mean 2^-8 * 1000 ~ 3.9, allow a generous Poisson excursion
        assert hits <= 15


class TestMaskedTag:
    def test_zero_mask_is_plain_hash(self, rng):
        seed = H.random_seed(rng, 8, 16)
        msg = B.random_bits(rng, 16)
        tag = H.masked_tag(seed, H.MaskKey(B.zeros(8)), msg)
        assert (tag.value == H.toeplitz_hash(seed, msg)).all()

    def test_xor_involution(self, rng):
        seed = H.random_seed(rng, 8, 16)
        mask = H.MaskKey(B.random_bits(rng, 8))
        msg = B.random_bits(rng, 16)
        tag = H.masked_tag(seed, mask, msg)
        assert ((tag.value ^ mask.value) == H.toeplitz_hash(seed, msg)).all()

    def test_worked_example_with_mask(self):
        seed = H.ToeplitzSeed(bits(1, 0, 1), 2, 2)
        tag = H.masked_tag(seed, H.MaskKey(bits(1, 0)), bits(1, 1))
        assert tag.value.tolist() == [0, 1]

    def test_mask_length_mismatch(self, rng):
        seed = H.random_seed(rng, 8, 16)
        with pytest.raises(DimensionError):
            H.masked_tag(seed, H.MaskKey(B.zeros(7)), B.zeros(16))


class TestVerifyTag:
    def test_equal_and_flipped(self, rng):
        t = H.Tag(B.random_bits(rng, 16))
        assert H.verify_tag(t, H.Tag(t.value.copy()))
        flipped = t.value.copy()
        flipped[3] ^= 1
        assert not H.verify_tag(t, H.Tag(flipped))

    def test_length_mismatch_raises(self):
        with pytest.raises(DimensionError):
            H.verify_tag(H.Tag(B.zeros(8)), H.Tag(B.zeros(9)))

    def test_random_match_rate(self, rng):
        # independent 8-bit tags collide around 2^-8
        n = 100_000
        a = rng.integers(0, 256, n)
        b = rng.integers(0, 256, n)
        rate = (a == b).mean()
        sigma = (2**-8 * (1 - 2**-8) / n) ** 0.5
        assert abs(rate - 2**-8) < 4 * sigma


class TestPrivacyAmplify:
    def test_zero_output(self, rng):
        seed = H.random_seed(rng, 8, 16)
        assert H.privacy_amplify(seed, B.random_bits(rng, 16), 0).size == 0

    def test_refuses_expansion(self, rng):
        seed = H.random_seed(rng, 32, 16)
        with pytest.raises(ConfigError):
            H.privacy_amplify(seed, B.random_bits(rng, 16), 17)

    def test_identical_inputs_identical_outputs(self, rng):
        seed = H.random_seed(rng, 8, 32)
        x = B.random_bits(rng, 32)
        a = H.privacy_amplify(seed, x, 8)
        b = H.privacy_amplify(seed, x.copy(), 8)
        assert (a == b).all()

    def test_matches_dense_oracle_16_to_4(self, rng):
        seed = H.random_seed(rng, 4, 16)
        x = B.random_bits(rng, 16)
        expect = H.toeplitz_matrix(seed) @ x % 2
        assert (H.privacy_amplify(seed, x, 4) == expect).all()

    def test_prefix_extraction_consistent(self, rng):
        # shorter extraction equals the top rows of the longer one
        seed = H.random_seed(rng, 12, 40)
        x = B.random_bits(rng, 40)
        full = H.privacy_amplify(seed, x, 12)
        part = H.privacy_amplify(seed, x, 5)
        assert (part == full[:5]).all()


class TestSerialization:
    def test_seed_round_trip(self, rng):
        seed = H.random_seed(rng, 80, 123)
        back, _ = H.ToeplitzSeed.deserialize(seed.serialize())
        assert back.out_len == 80 and back.msg_len == 123
        assert (back.bits == seed.bits).all()

    def test_wire_format_layout(self):
        # u32 LE bit count then LSB-first packed bits
        payload = B.serialize_bits(bits(1, 0, 0, 0, 0, 0, 0, 0, 1))
        assert payload[:4] == (9).to_bytes(4, "little")
        assert payload[4] == 0b00000001 and payload[5] == 0b00000001
