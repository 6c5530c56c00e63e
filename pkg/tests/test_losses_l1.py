import numpy as np
import pytest
import torch

from coarsepair.errors import DegenerateInputError, InvalidInputError
from coarsepair.losses import (
    WindowSpec,
    l1_misalign,
    l1_misalign_batch,
    l1_plain,
    l1_star,
    l1_star_batch,
    misalign_map,
    window_indices,
)
from oracles import oracle_l1_misalign, oracle_l1_star


def rand_pair(rng, h=8, w=8, c=3):
    gen = torch.tensor(rng.uniform(-1, 1, (h, w, c)))
    tgt = torch.tensor(rng.uniform(-1, 1, (h, w, c)))
    return gen, tgt


class TestL1Plain:
    def test_identity_is_zero(self, rng):
        gen, _ = rand_pair(rng)
        assert l1_plain(gen, gen).item() == 0.0

    def test_constant_offset(self):
        gen = torch.zeros(5, 5, 3)
        tgt = torch.full((5, 5, 3), 0.5)
        assert l1_plain(gen, tgt).item() == pytest.approx(0.5)

    def test_hand_case_2x2(self):
        gen = torch.tensor([[[0.0], [1.0]], [[1.0], [0.0]]])
        tgt = torch.tensor([[[1.0], [1.0]], [[0.0], [0.0]]])
        # mean of |diffs| = (1 + 0 + 1 + 0) / 4
        assert l1_plain(gen, tgt).item() == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            l1_plain(torch.zeros(2, 2, 1), torch.zeros(2, 3, 1))


class TestWindowIndices:
    def test_full_window(self):
        got = window_indices(1, 1, WindowSpec(1, 1), (3, 3))
        assert got == [(a, b) for a in range(3) for b in range(3)]

    def test_corner_clipping(self):
        assert window_indices(0, 0, WindowSpec(1, 1), (3, 3)) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_degenerate_window(self):
        assert window_indices(2, 3, WindowSpec(0, 0), (5, 5)) == [(2, 3)]

    def test_row_major_order_and_contains_center(self, rng):
        for _ in range(20):
            i, j = int(rng.integers(0, 6)), int(rng.integers(0, 7))
            spec = WindowSpec(int(rng.integers(0, 3)), int(rng.integers(0, 3)))
            got = window_indices(i, j, spec, (6, 7))
            assert (i, j) in got
            assert got == sorted(got)

    def test_out_of_bounds_center(self):
        with pytest.raises(InvalidInputError):
            window_indices(3, 0, WindowSpec(1, 1), (3, 3))


class TestL1Misalign:
    def test_spike_shift_absorbed_by_window(self):
        gen = torch.zeros(4, 4, 1)
        gen[1, 1, 0] = 1.0
        tgt = torch.zeros(4, 4, 1)
        tgt[2, 1, 0] = 1.0
        assert l1_misalign(gen, tgt, WindowSpec(1, 1)).item() == 0.0
        assert l1_misalign(gen, tgt, WindowSpec(0, 0)).item() == pytest.approx(2 / 16)

    def test_constant_images(self):
        gen = torch.zeros(6, 6, 1)
        tgt = torch.full((6, 6, 1), -0.7)
        for k in (0, 1, 3):
            assert l1_misalign(gen, tgt, WindowSpec(k, k)).item() == pytest.approx(0.7)

    def test_shift_with_zero_padding_loss_on_boundary_row_only(self, rng):
        gen = torch.tensor(rng.uniform(0.2, 1.0, (6, 6, 1)))
        tgt = torch.zeros(6, 6, 1, dtype=gen.dtype)
        tgt[1:, :, :] = gen[:-1, :, :]  # shift down by one, zero-pad first row
        m = misalign_map(gen, tgt, WindowSpec(1, 1))
        assert m[:-1].abs().max().item() < 1e-12
        assert m[-1].min().item() > 0  # bottom row of gen has no copy in tgt

    def test_oracle_equivalence(self, rng):
        for _ in range(10):
            gen, tgt = rand_pair(rng)
            for k in (0, 1, 2):
                got = l1_misalign(gen, tgt, WindowSpec(k, k)).item()
                want = oracle_l1_misalign(gen.numpy(), tgt.numpy(), k, k)
                assert got == pytest.approx(want, abs=1e-9)

    def test_asymmetric_window_oracle(self, rng):
        gen, tgt = rand_pair(rng, 7, 9)
        got = l1_misalign(gen, tgt, WindowSpec(2, 0)).item()
        want = oracle_l1_misalign(gen.numpy(), tgt.numpy(), 2, 0)
        assert got == pytest.approx(want, abs=1e-9)

    def test_window_monotone_in_k(self, rng):
        for _ in range(20):
            gen, tgt = rand_pair(rng, 6, 6)
            vals = [l1_misalign(gen, tgt, WindowSpec(k, k)).item() for k in (0, 1, 2, 3)]
            assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_k0_equals_channel_summed_plain(self, rng):
        gen, tgt = rand_pair(rng, 5, 5, 3)
        k0 = l1_misalign(gen, tgt, WindowSpec(0, 0)).item()
        plain = l1_plain(gen, tgt).item()
        assert k0 == pytest.approx(3 * plain, rel=1e-12)

    def test_batch_matches_single(self, rng):
        gens = torch.stack([rand_pair(rng, 6, 6)[0] for _ in range(3)])
        tgts = torch.stack([rand_pair(rng, 6, 6)[1] for _ in range(3)])
        batch = l1_misalign_batch(gens, tgts, WindowSpec(1, 1))
        for i in range(3):
            single = l1_misalign(gens[i], tgts[i], WindowSpec(1, 1))
            assert batch[i].item() == pytest.approx(single.item(), abs=1e-12)


class TestL1Star:
    def test_all_background_equals_misalign(self, rng):
        gen, tgt = rand_pair(rng)
        mask = np.ones((8, 8), bool)
        for k in (0, 2):
            star = l1_star(gen, tgt, mask, WindowSpec(k, k)).item()
            mis = l1_misalign(gen, tgt, WindowSpec(k, k)).item()
            assert star == pytest.approx(mis, rel=1e-12)

    def test_single_background_pixel(self, rng):
        gen, tgt = rand_pair(rng, 4, 4, 2)
        mask = np.zeros((4, 4), bool)
        mask[0, 0] = True
        got = l1_star(gen, tgt, mask, WindowSpec(0, 0)).item()
        want = (gen[0, 0] - tgt[0, 0]).abs().sum().item()
        assert got == pytest.approx(want)

    def test_foreground_perturbation_bitwise_invariant(self, rng):
        gen, tgt = rand_pair(rng)
        mask = rng.random((8, 8)) > 0.4
        mask[0, 0] = True  # keep at least one background pixel
        base = l1_star(gen, tgt, mask, WindowSpec(1, 1)).item()
        fg = ~torch.tensor(mask)
        gen2 = gen.clone()
        tgt2 = tgt.clone()
        gen2[fg] = torch.tensor(rng.uniform(-1, 1, (int(fg.sum()), 3)))
        tgt2[fg] = torch.tensor(rng.uniform(-1, 1, (int(fg.sum()), 3)))
        assert l1_star(gen2, tgt2, mask, WindowSpec(1, 1)).item() == base

    def test_empty_mask_rejected(self, rng):
        gen, tgt = rand_pair(rng, 4, 4)
        with pytest.raises(DegenerateInputError):
            l1_star(gen, tgt, np.zeros((4, 4), bool), WindowSpec(1, 1))

    def test_isolated_pixpixels_skipped_from_normalizer(self):
        # background pixel at (0,0) with k=0 window has itself as candidate;
        # make candidates empty by masking a pixel whose window is all fg.
        gen = torch.zeros(3, 3, 1)
        tgt = torch.ones(3, 3, 1)
        mask = np.zeros((3, 3), bool)
        mask[0, 0] = True
        mask[2, 2] = True
        # k=0: both pixels are their own candidates -> normalizer 2
        v = l1_star(gen, tgt, mask, WindowSpec(0, 0)).item()
        assert v == pytest.approx(1.0)

    def test_oracle_equivalence_with_masks(self, rng):
        for _ in range(10):
            gen, tgt = rand_pair(rng)
            mask = rng.random((8, 8)) > 0.35
            if not mask.any():
                continue
            for k in (0, 1, 2):
                got = l1_star(gen, tgt, mask, WindowSpec(k, k)).item()
                want = oracle_l1_star(gen.numpy(), tgt.numpy(), mask, k, k)
                assert got == pytest.approx(want, abs=1e-9)

    def test_batch_matches_single(self, rng):
        gens = torch.stack([rand_pair(rng, 6, 6)[0] for _ in range(3)])
        tgts = torch.stack([rand_pair(rng, 6, 6)[1] for _ in range(3)])
        masks = rng.random((3, 6, 6)) > 0.3
        masks[:, 2, 2] = True
        batch = l1_star_batch(gens, tgts, torch.tensor(masks), WindowSpec(1, 1))
        for i in range(3):
            single = l1_star(gens[i], tgts[i], masks[i], WindowSpec(1, 1))
            assert batch[i].item() == pytest.approx(single.item(), abs=1e-12)


class TestSubgradientRouting:
    def test_tie_routes_to_first_row_major_candidate(self):
        # 1x2 image, k_w = 1. Query (0,0) at 0.5 ties between t(0,0) = 0.2
        # (distance .3) and t(0,1) = 0.8 (distance .3); row-major first is
        # t(0,0). Query (0,1) at 0.3 uniquely selects t(0,0). Each query
        # contributes -sign(gen - t)/(h*w) to its selected target entry, so
        # t(0,0) collects -1.0 and t(0,1) exactly 0.
        gen = torch.tensor([[[0.5], [0.3]]], dtype=torch.float64)
        t = torch.tensor([[[0.2], [0.8]]], dtype=torch.float64, requires_grad=True)
        l1_misalign(gen, t, WindowSpec(0, 1)).backward()
        assert t.grad[0, 0, 0].item() == pytest.approx(-1.0)
        assert t.grad[0, 1, 0].item() == 0.0
