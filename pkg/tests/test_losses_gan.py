import math

import pytest
import torch

from coarsepair.errors import InvalidInputError
from coarsepair.losses import (
    ObjectiveWeights,
    combined_objective,
    discriminator_batch,
    gan_loss_d,
    gan_loss_g,
)


class TestGanLosses:
    def test_cross_entropy_uncertain_discriminator(self):
        half = torch.full((4, 4), 0.5, dtype=torch.float64)
        v = gan_loss_d(half, half, "cross-entropy")
        assert v.item() == pytest.approx(-2 * math.log(2), abs=1e-12)

    def test_least_squares_perfect_discriminator(self):
        v = gan_loss_d(torch.ones(3, 3), torch.zeros(3, 3), "least-squares")
        assert v.item() == 0.0

    def test_least_squares_fooled_generator(self):
        assert gan_loss_g(torch.ones(5), "least-squares").item() == 0.0

    def test_cross_entropy_generator_drives_toward_real(self):
        lo = gan_loss_g(torch.full((2, 2), 0.4), "cross-entropy").item()
        hi = gan_loss_g(torch.full((2, 2), 0.9), "cross-entropy").item()
        assert hi < lo

    def test_cross_entropy_rejects_out_of_range(self):
        bad = torch.tensor([0.5, 1.0])
        ok = torch.tensor([0.5, 0.5])
        with pytest.raises(InvalidInputError):
            gan_loss_d(bad, ok, "cross-entropy")
        with pytest.raises(InvalidInputError):
            gan_loss_g(torch.tensor([0.0, 0.5]), "cross-entropy")

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            gan_loss_g(torch.tensor([float("nan")]), "least-squares")

    def test_unknown_form_rejected(self):
        with pytest.raises(InvalidInputError):
            gan_loss_g(torch.ones(2) * 0.5, "wasserstein")

    def test_least_squares_direction(self):
        # D penalty grows as real predictions drop and fake predictions rise
        base = gan_loss_d(torch.full((2,), 0.9), torch.full((2,), 0.1), "least-squares").item()
        worse = gan_loss_d(torch.full((2,), 0.5), torch.full((2,), 0.5), "least-squares").item()
        assert worse > base


class TestDiscriminatorBatch:
    def setup_method(self):
        torch.manual_seed(0)
        self.real_a = torch.rand(2, 6, 6, 3)
        self.real_b = torch.rand(2, 6, 6, 3)
        self.real_b_prime = torch.rand(2, 6, 6, 3)
        self.gen_out = torch.rand(2, 6, 6, 3)

    def test_unpaired_real_side_is_independent_batch(self):
        db = discriminator_batch("unpaired", self.real_a, self.real_b, self.real_b_prime, self.gen_out)
        assert torch.equal(db.real, self.real_b_prime)
        assert not torch.equal(db.real, self.real_b)
        assert torch.equal(db.fake, self.gen_out)
        assert db.conditioning is None

    def test_conditional_concatenates_source(self):
        db = discriminator_batch("conditional", self.real_a, self.real_b, None, self.gen_out)
        assert db.real.shape[-1] == 6
        assert torch.equal(db.real[..., :3], self.real_a)
        assert torch.equal(db.real[..., 3:], self.real_b)
        assert torch.equal(db.fake[..., :3], self.real_a)
        assert torch.equal(db.fake[..., 3:], self.gen_out)
        assert torch.equal(db.conditioning, self.real_a)

    def test_paired_with_coincident_batches_matches_unpaired(self):
        paired = discriminator_batch("paired", self.real_a, self.real_b, None, self.gen_out)
        unpaired = discriminator_batch(
            "unpaired", self.real_a, self.real_b, self.real_b, self.gen_out
        )
        assert torch.equal(paired.real, unpaired.real)
        assert torch.equal(paired.fake, unpaired.fake)
        assert paired.conditioning == unpaired.conditioning is None

    def test_unpaired_requires_independent_batch(self):
        with pytest.raises(InvalidInputError):
            discriminator_batch("unpaired", self.real_a, self.real_b, None, self.gen_out)

    def test_shape_consistency_enforced(self):
        with pytest.raises(InvalidInputError):
            discriminator_batch(
                "paired", self.real_a, self.real_b[:, :3], None, self.gen_out
            )

    def test_unknown_mode_rejected(self):
        with pytest.raises(InvalidInputError):
            discriminator_batch("cycle", self.real_a, self.real_b, None, self.gen_out)


class TestCombinedObjective:
    def test_weight_collapse(self):
        w = ObjectiveWeights(lambda_l1=0.0, lambda_nce=0.0)
        assert combined_objective(0.37, 99.0, 7.0, w).item() == pytest.approx(0.37)

    def test_arithmetic(self):
        w = ObjectiveWeights(lambda_l1=10.0, lambda_nce=1.0)
        assert combined_objective(0.3, 0.05, 0.7, w).item() == pytest.approx(1.5)

    def test_zero(self):
        w = ObjectiveWeights()
        assert combined_objective(0.0, 0.0, 0.0, w).item() == 0.0

    def test_linear_in_each_term(self, rng):
        w = ObjectiveWeights(lambda_l1=3.0, lambda_nce=0.5)
        g, l, n = rng.uniform(0, 1, 3)
        base = combined_objective(g, l, n, w).item()
        assert combined_objective(g + 1, l, n, w).item() == pytest.approx(base + 1)
        assert combined_objective(g, l + 1, n, w).item() == pytest.approx(base + 3)
        assert combined_objective(g, l, n + 1, w).item() == pytest.approx(base + 0.5)

    def test_negative_weights_rejected(self):
        with pytest.raises(InvalidInputError):
            ObjectiveWeights(lambda_l1=-1.0)
