import math

import pytest
import torch

from masktransfer import losses as L
from masktransfer.losses import LossWeights, NonFiniteLoss, bce, total_loss

LN2 = math.log(2.0)


class TestBce:
    def test_half_prob_true_label(self):
        assert float(bce(torch.tensor([0.5]), 1.0)) == pytest.approx(LN2, rel=1e-6)

    def test_half_prob_false_label(self):
        assert float(bce(torch.tensor([0.5]), 0.0)) == pytest.approx(LN2, rel=1e-6)

    def test_confident_correct_is_near_zero(self):
        assert float(bce(torch.tensor([1.0 - 1e-7]), 1.0)) == pytest.approx(0.0, abs=1e-6)

    def test_endpoints_clamped_finite(self):
        assert torch.isfinite(bce(torch.tensor([0.0]), 1.0))
        assert torch.isfinite(bce(torch.tensor([1.0]), 0.0))


def _half_discriminator(bundle):
    with torch.no_grad():
        bundle.c.out.weight.zero_()
        bundle.c.out.bias.zero_()
    return bundle


class TestDomainConfusion:
    def test_half_output_gives_two_ln2(self, toy_bundle, toy_batches):
        a, b = toy_batches
        _half_discriminator(toy_bundle).eval()
        value = L.domain_confusion_loss(toy_bundle, a, b)
        assert float(value) == pytest.approx(2 * LN2, rel=1e-6)

    def test_confident_one_gives_near_zero(self, toy_bundle, toy_batches):
        a, b = toy_batches
        with torch.no_grad():
            toy_bundle.c.out.weight.zero_()
            toy_bundle.c.out.bias.fill_(50.0)
        toy_bundle.eval()
        assert float(L.domain_confusion_loss(toy_bundle, a, b)) == pytest.approx(0.0, abs=1e-5)

    def test_disc_half_output(self, toy_bundle, toy_batches):
        a, b = toy_batches
        _half_discriminator(toy_bundle).eval()
        assert float(L.discriminator_loss(toy_bundle, a, b)) == pytest.approx(2 * LN2, rel=1e-6)

    def test_dc_and_disc_not_complementary(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        dc = float(L.domain_confusion_loss(toy_bundle, a, b))
        disc = float(L.discriminator_loss(toy_bundle, a, b))
        assert abs((dc + disc) - 4 * LN2) > 1e-4

    def test_disc_detaches_encoder(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.train()
        loss = L.discriminator_loss(toy_bundle, a, b)
        loss.backward()
        assert all(p.grad is None for p in toy_bundle.e_c.parameters())
        assert any(p.grad is not None for p in toy_bundle.c.parameters())


class _StubBundle:
    """Minimal bundle stub with controllable decoder outputs."""

    def __init__(self, mask_value, raw_fn, decoded_a_fn):
        self.mask_value = mask_value
        self.raw_fn = raw_fn
        self.decoded_a_fn = decoded_a_fn

    def encode_common(self, x):
        self._x = x
        return x

    def encode_separate(self, x):
        return x

    def decode_a(self, code):
        return self.decoded_a_fn(code)

    def decode_b(self, common, separate):
        n, _, h, w = common.shape
        mask = torch.full((n, 1, h, w), self.mask_value)
        return mask, self.raw_fn(common)


class TestFixedPoints:
    def test_recon1_a_zero_at_identity(self, toy_batches):
        a, _ = toy_batches
        stub = _StubBundle(0.5, lambda c: c, lambda c: c)
        assert float(L.recon1_a(stub, a)) == 0.0

    def test_recon1_a_constant_offset(self, toy_batches):
        a, _ = toy_batches
        stub = _StubBundle(0.5, lambda c: c, lambda c: c + 0.125)
        assert float(L.recon1_a(stub, a)) == pytest.approx(0.125, rel=1e-6)

    def test_recon1_b_zero_with_empty_mask_and_identity_carrier(self, toy_batches):
        _, b = toy_batches
        stub = _StubBundle(0.0, lambda c: torch.zeros_like(c), lambda c: c)
        assert float(L.recon1_b(stub, b)) == 0.0

    def test_recon1_b_zero_with_full_mask_and_identity_raw(self, toy_batches):
        _, b = toy_batches
        stub = _StubBundle(1.0, lambda c: c, lambda c: torch.zeros_like(c))
        assert float(L.recon1_b(stub, b)) == 0.0

    def test_recon2_zero_mask_ignores_raw(self, toy_batches):
        a, _ = toy_batches
        stub = _StubBundle(0.0, lambda c: c + 123.0, lambda c: c)
        assert float(L.recon2(stub, a)) == 0.0

    def test_recon2_full_mask_offset(self, toy_batches):
        a, _ = toy_batches
        stub = _StubBundle(1.0, lambda c: c + 0.25, lambda c: c)
        assert float(L.recon2(stub, a)) == pytest.approx(0.25, rel=1e-6)

    def test_l2_norm_variant_squares(self, toy_batches):
        a, _ = toy_batches
        stub = _StubBundle(1.0, lambda c: c + 0.25, lambda c: c)
        assert float(L.recon2(stub, a, norm="l2")) == pytest.approx(0.25**2, rel=1e-6)

    def test_cycle_zero_when_codes_reproduced(self, toy_batches):
        a, b = toy_batches
        # mask 0 means z = a, and identity encoders reproduce codes exactly
        stub = _StubBundle(0.0, lambda c: c, lambda c: c)
        assert float(L.cycle_loss(stub, a, a)) == 0.0

    def test_cycle_offset_squared(self, toy_batches):
        a, _ = toy_batches

        class OffsetStub(_StubBundle):
            def encode_separate(self, x):
                return x + 0.0  # same space as common

        stub = OffsetStub(1.0, lambda c: c + 0.1, lambda c: c)
        # z = raw = a + 0.1, codes shift by 0.1 -> each MSE term = 0.01
        assert float(L.cycle_loss(stub, a, a)) == pytest.approx(0.02, rel=1e-5)


class TestWeights:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-1.0)

    def test_unknown_drop_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            LossWeights(dropped=frozenset({"nope"}))

    def test_bad_norm_rejected(self):
        with pytest.raises(ValueError, match="norm"):
            LossWeights(recon1_norm="linf")

    def test_drop_equals_zero_weight(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        dropped = LossWeights(dropped=frozenset({"recon1_a"}))
        zeroed = LossWeights(lambda1=0.0)
        t1, r1 = total_loss(toy_bundle, a, b, dropped)
        t2, r2 = total_loss(toy_bundle, a, b, zeroed)
        assert float(t1) == float(t2)
        assert r1.recon1_a == 0.0 and r2.recon1_a == 0.0

    def test_drop_equals_zero_weight_gradients(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()

        def grads(weights):
            params = list(toy_bundle.generator_parameters())
            for p in params:
                p.grad = None
            t, _ = total_loss(toy_bundle, a, b, weights)
            t.backward()
            return [None if p.grad is None else p.grad.clone() for p in params]

        g1 = grads(LossWeights(dropped=frozenset({"cycle"})))
        g2 = grads(LossWeights(lambda3=0.0))
        for u, v in zip(g1, g2):
            if u is None or v is None:
                assert u is None and v is None
            else:
                assert torch.allclose(u, v, atol=0, rtol=0)


class TestTotalLoss:
    def test_all_lambdas_zero_gives_dc(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        weights = LossWeights(lambda1=0, lambda2=0, lambda3=0, lambda4=0, lambda5=0)
        total, report = total_loss(toy_bundle, a, b, weights)
        assert float(total) == pytest.approx(report.dc, rel=1e-6)

    def test_total_is_weighted_sum_of_terms(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        w = LossWeights(lambda1=5.0, lambda2=5.0, lambda3=1.0, lambda4=0.7, lambda5=0.7)
        total, report = total_loss(toy_bundle, a, b, w)
        by_hand = (
            float(L.domain_confusion_loss(toy_bundle, a, b))
            + 5.0 * float(L.recon1_a(toy_bundle, a))
            + 5.0 * float(L.recon1_b(toy_bundle, b))
            + 1.0 * float(L.cycle_loss(toy_bundle, a, b))
            + 0.7 * float(L.recon2(toy_bundle, a))
            + 0.7 * float(L.recon2(toy_bundle, b))
        )
        assert float(total) == pytest.approx(by_hand, rel=1e-5)
        assert report.total == pytest.approx(by_hand, rel=1e-5)

    def test_affine_in_each_lambda(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        w1 = LossWeights(lambda4=0.7)
        w2 = LossWeights(lambda4=1.4)
        t1, r1 = total_loss(toy_bundle, a, b, w1)
        t2, r2 = total_loss(toy_bundle, a, b, w2)
        assert float(t2) - float(t1) == pytest.approx(0.7 * r1.recon2_a, rel=1e-4)

    def test_mask_l2_replaces_recon2(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        w = LossWeights(mask_l2_coeff=0.5)
        total, report = total_loss(toy_bundle, a, b, w)
        assert report.recon2_a == 0.0 and report.recon2_b == 0.0
        assert report.mask_l2 > 0.0
        base = total_loss(toy_bundle, a, b, LossWeights(lambda4=0, lambda5=0))[1]
        assert float(total) == pytest.approx(base.total + 0.5 * report.mask_l2, rel=1e-5)

    def test_nan_names_the_term(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        with torch.no_grad():
            toy_bundle.d_a.net.blocks[0][0].weight.fill_(float("nan"))
        with pytest.raises(NonFiniteLoss, match="recon1_a"):
            total_loss(toy_bundle, a, b, LossWeights())

    def test_all_terms_non_negative(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        _, report = total_loss(toy_bundle, a, b, LossWeights())
        for term in ("dc", "recon1_a", "recon1_b", "cycle", "recon2_a", "recon2_b"):
            assert getattr(report, term) >= 0.0

    def test_report_json_round_trip(self, toy_bundle, toy_batches):
        a, b = toy_batches
        toy_bundle.eval()
        _, report = total_loss(toy_bundle, a, b, LossWeights())
        back = type(report).from_json(report.to_json())
        assert back == report
