import math

import numpy as np
import pytest
import torch

from coarsepair.errors import DegenerateInputError, InvalidInputError
from coarsepair.losses import (
    NCEConfig,
    nce_cross_entropy,
    patchnce_star,
    sample_background_locations,
)
from coarsepair.models import ExtractorSpec, FeatureExtractor, Generator, GeneratorSpec


def make_extractor(seed=0, stages=1, taps=(0, 1), embed_dim=8):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        gen = Generator(GeneratorSpec(base_channels=8, downsample_stages=stages, residual_blocks=1))
        return FeatureExtractor(gen, ExtractorSpec(tap_layers=taps, embed_dim=embed_dim))


class TestNceCrossEntropy:
    def test_uniform_two_way_is_log2(self):
        q = torch.tensor([1.0, 0.0], dtype=torch.float64)
        v = nce_cross_entropy(q, q, [q], temperature=1.0)
        assert v.item() == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("s", [4, 16])
    def test_uniform_s_way_is_log_s(self, s):
        q = torch.tensor([0.3, -0.4], dtype=torch.float64)
        p = torch.tensor([0.5, 0.5], dtype=torch.float64)
        negs = [p.clone() for _ in range(s - 1)]
        v = nce_cross_entropy(q, p, negs, temperature=0.7)
        assert v.item() == pytest.approx(math.log(s), abs=1e-12)

    def test_hand_computed_softmax_case(self):
        # q.positive = 2, q.negatives = [1, 0], tau = 1
        q = torch.tensor([1.0], dtype=torch.float64)
        p = torch.tensor([2.0], dtype=torch.float64)
        negs = [torch.tensor([1.0], dtype=torch.float64), torch.tensor([0.0], dtype=torch.float64)]
        want = -math.log(math.exp(2) / (math.exp(2) + math.e + 1))
        assert nce_cross_entropy(q, p, negs, 1.0).item() == pytest.approx(want, abs=1e-12)
        assert want == pytest.approx(0.40761, abs=5e-6)

    def test_logit_shift_invariance(self, rng):
        # appending a coordinate (x to the query, y to every key) adds the
        # constant x*y to every similarity, shifting all logits by x*y/tau
        d = 6
        q = torch.tensor(rng.normal(size=d))
        p = torch.tensor(rng.normal(size=d))
        negs = [torch.tensor(rng.normal(size=d)) for _ in range(5)]
        base = nce_cross_entropy(q, p, negs, 0.3).item()
        for x, y in [(2.0, 1.5), (-3.0, 0.7), (10.0, 10.0)]:
            q2 = torch.cat([q, torch.tensor([x])])
            ext = lambda v: torch.cat([v, torch.tensor([y])])
            shifted = nce_cross_entropy(q2, ext(p), [ext(n) for n in negs], 0.3).item()
            assert shifted == pytest.approx(base, abs=1e-6)

    def test_strictly_decreasing_in_positive_similarity(self, rng):
        q = torch.tensor(rng.normal(size=4))
        p = torch.tensor(rng.normal(size=4))
        negs = [torch.tensor(rng.normal(size=4)) for _ in range(3)]
        v1 = nce_cross_entropy(q, p, negs, 1.0).item()
        v2 = nce_cross_entropy(q, p + 0.5 * q, negs, 1.0).item()
        assert v2 < v1

    def test_empty_negatives_rejected(self):
        q = torch.ones(3)
        with pytest.raises(InvalidInputError):
            nce_cross_entropy(q, q, [], 1.0)

    def test_bad_temperature_rejected(self):
        q = torch.ones(2)
        with pytest.raises(InvalidInputError):
            nce_cross_entropy(q, q, [q], 0.0)


class TestPatchNceStar:
    def test_two_locations_reduce_to_pairwise_terms(self, rng):
        # one layer, exactly two background cells: the loss must equal the
        # mean of two 2-way nce terms computed by hand from the features
        ex = make_extractor(stages=1, taps=(0,), embed_dim=8)
        img_a = torch.tensor(rng.uniform(-1, 1, (8, 8, 3)), dtype=torch.float32)
        img_b = torch.tensor(rng.uniform(-1, 1, (8, 8, 3)), dtype=torch.float32)
        mask = np.zeros((8, 8), bool)
        mask[2, 3] = True
        mask[5, 1] = True
        cfg = NCEConfig(temperature=0.2, layers=1, patches_per_layer=16, normalize_features=True)
        got = patchnce_star(img_a, img_b, ex, mask, cfg, generator=torch.Generator().manual_seed(0))

        fa = ex.feature_maps(img_a)[0].reshape(-1, 8)
        fb = ex.feature_maps(img_b)[0].reshape(-1, 8)
        idx = [2 * 8 + 3, 5 * 8 + 1]
        qa = torch.nn.functional.normalize(fa[idx], dim=1)
        kb = torch.nn.functional.normalize(fb[idx], dim=1)
        t1 = nce_cross_entropy(qa[0], kb[0], [kb[1]], cfg.temperature)
        t2 = nce_cross_entropy(qa[1], kb[1], [kb[0]], cfg.temperature)
        want = (t1 + t2) / 2
        assert got.item() == pytest.approx(want.item(), rel=1e-6)

    def test_identical_images_bounded_by_uniform_baseline(self, rng):
        ex = make_extractor(stages=1, taps=(0, 1), embed_dim=8)
        img = torch.tensor(rng.uniform(-1, 1, (8, 8, 3)), dtype=torch.float32)
        mask = np.ones((8, 8), bool)
        cfg = NCEConfig(temperature=0.07, layers=2, patches_per_layer=8, normalize_features=True)
        v = patchnce_star(img, img, ex, mask, cfg, generator=torch.Generator().manual_seed(1))
        assert v.item() < 2 * math.log(8)  # strictly below uniform baseline

    def test_fully_masked_receptive_fields_do_not_change_loss(self, rng):
        # foreground block aligned to the coarsest feature grid; perturb only
        # deep inside it -> sampled background features are bitwise unchanged
        ex = make_extractor(stages=1, taps=(0, 1), embed_dim=8)
        h = w = 16
        img_a = torch.tensor(rng.uniform(-1, 1, (h, w, 3)), dtype=torch.float32)
        img_b = torch.tensor(rng.uniform(-1, 1, (h, w, 3)), dtype=torch.float32)
        mask = np.ones((h, w), bool)
        mask[4:12, 4:12] = False
        cfg = NCEConfig(temperature=0.1, layers=2, patches_per_layer=32, normalize_features=True)
        base = patchnce_star(
            img_a, img_b, ex, mask, cfg, generator=torch.Generator().manual_seed(3)
        ).item()
        img_a2 = img_a.clone()
        img_b2 = img_b.clone()
        img_a2[7:9, 7:9] = 0.123  # RF radius of both taps is < 3 pixels
        img_b2[7:9, 7:9] = -0.5
        moved = patchnce_star(
            img_a2, img_b2, ex, mask, cfg, generator=torch.Generator().manual_seed(3)
        ).item()
        assert moved == base

    def test_fewer_than_two_locations_rejected(self, rng):
        ex = make_extractor(stages=1, taps=(0,))
        img = torch.tensor(rng.uniform(-1, 1, (8, 8, 3)), dtype=torch.float32)
        mask = np.zeros((8, 8), bool)
        mask[0, 0] = True
        cfg = NCEConfig(layers=1, patches_per_layer=4)
        with pytest.raises(DegenerateInputError):
            patchnce_star(img, img, ex, mask, cfg)

    def test_sampling_respects_count_and_background(self, rng):
        mask = rng.random((8, 8)) > 0.5
        if mask.sum() < 2:
            mask[:2, 0] = True
        g = torch.Generator().manual_seed(9)
        locs = sample_background_locations(mask, 5, g)
        assert len(locs) == min(5, int(mask.sum()))
        flat = mask.reshape(-1)
        assert all(flat[i] for i in locs.tolist())
        assert len(set(locs.tolist())) == len(locs)
