import numpy as np
import pytest

from ascattack.core import (
    BinaryMask,
    ImagePlane,
    ObjectTarget,
    PerturbationTexture,
    compose_adversarial,
)
from ascattack.errors import CapabilityError, ContractViolationError
from ascattack.oracles import (
    BOXSHIFT,
    MISLABEL,
    VANISHING,
    DefenseSpec,
    Objective,
    ensemble_oracle,
    toy_edge_detector,
    toy_linear_detector,
    with_defense,
)
from ascattack.oracles.base import Oracle, evaluate, gradient
from ascattack.oracles.defense import gaussian_filter_image

from conftest import assert_gradient_matches


def seeded_image(seed, size=8, lo=0.35, hi=0.65):
    return ImagePlane(np.random.default_rng(seed).uniform(lo, hi, size=(size, size, 3)))


TARGET = ObjectTarget(bbox=(1, 1, 6, 6), category=2)


class TestLinearToy:
    def test_same_seed_same_weights(self):
        a, b = toy_linear_detector(11), toy_linear_detector(11)
        assert np.array_equal(a.weights(8, 8), b.weights(8, 8))

    def test_different_seeds_differ(self):
        assert not np.array_equal(
            toy_linear_detector(1).weights(8, 8), toy_linear_detector(2).weights(8, 8)
        )

    def test_zero_weight_degenerate_detections_constant(self):
        oracle = toy_linear_detector(5)
        params = oracle._params(4, 4)
        params["w"] = np.zeros_like(params["w"])
        obj = Objective(VANISHING, ObjectTarget(bbox=(0, 0, 4, 4), category=0))
        v1 = evaluate(oracle, seeded_image(1, 4), obj)
        v2 = evaluate(oracle, seeded_image(2, 4), obj)
        assert v1.value == v2.value
        assert v1.detections[0].score == v2.detections[0].score

    def test_vanishing_gradient_closed_form(self):
        oracle = toy_linear_detector(3)
        img = seeded_image(42)
        obj = Objective(VANISHING, TARGET)
        g = gradient(oracle, img, obj)
        w = oracle.weights(8, 8)
        z = float((w[1:7, 1:7] * img.values[1:7, 1:7]).sum() + oracle._params(8, 8)["b"])
        s = 1.0 / (1.0 + np.exp(-z))
        expected = np.zeros_like(g)
        expected[1:7, 1:7] = -s * w[1:7, 1:7]
        assert np.allclose(g, expected, rtol=1e-12, atol=1e-15)

    def test_value_floor_guard(self):
        oracle = toy_linear_detector(3)
        params = oracle._params(2, 2)
        params["b"] = 1e6  # saturate the sigmoid
        obj = Objective(VANISHING, ObjectTarget(bbox=(0, 0, 2, 2), category=0))
        rep = evaluate(oracle, seeded_image(0, 2), obj)
        assert rep.value == pytest.approx(np.log(1e-12))

    def test_per_pixel_optimal_replacement_signs(self):
        oracle = toy_linear_detector(9)
        img = seeded_image(5)
        opt = oracle.optimal_vanishing_texture(img)
        w = oracle.weights(8, 8)
        assert ((opt == 0.0) == (w > 0)).all()

    def test_boxshift_degrades_to_noop(self):
        oracle = toy_linear_detector(4)
        img = seeded_image(6)
        obj = Objective(BOXSHIFT, TARGET)
        assert evaluate(oracle, img, obj).value == -1.0
        assert np.count_nonzero(gradient(oracle, img, obj)) == 0


class TestEdgeToy:
    def test_uniform_image_zero_energy_score(self):
        oracle = toy_edge_detector(0)
        img = ImagePlane(np.full((8, 8, 3), 0.5))
        rep = evaluate(oracle, img, Objective(VANISHING, TARGET))
        expected = 1.0 / (1.0 + np.exp(-oracle.beta))
        # box objectness at zero energy collapses to sigmoid(beta)
        assert rep.detections[0].score == pytest.approx(expected, abs=1e-9)

    def test_uniform_image_fallback_box_is_window_center(self):
        oracle = toy_edge_detector(0)
        img = ImagePlane(np.full((20, 20, 3), 0.4))
        obj = Objective(VANISHING, ObjectTarget(bbox=(4, 4, 10, 10), category=0))
        det = evaluate(oracle, img, obj).detections[0]
        x, y, w, h = det.bbox
        assert x + w / 2 == pytest.approx(9.0)
        assert y + h / 2 == pytest.approx(9.0)

    def test_step_edge_raises_objectness(self):
        oracle = toy_edge_detector(0)
        flat = ImagePlane(np.full((16, 16, 3), 0.8))
        square = np.full((16, 16, 3), 0.8)
        square[4:12, 4:12] = 0.15
        obj = Objective(VANISHING, ObjectTarget(bbox=(4, 4, 8, 8), category=0))
        s_flat = evaluate(oracle, flat, obj).detections[0].score
        s_square = evaluate(oracle, ImagePlane(square), obj).detections[0].score
        assert s_square > s_flat

    def test_boundary_beats_interior_ablation(self):
        # desk-scale analog of the per-region contribution table
        oracle = toy_edge_detector(1)
        vals = np.full((24, 24, 3), 0.75)
        vals[6:18, 6:18] = 0.2
        img = ImagePlane(vals)
        seg = np.zeros((24, 24), dtype=bool)
        seg[6:18, 6:18] = True
        target = ObjectTarget(bbox=(6, 6, 12, 12), category=0, segmentation=BinaryMask(seg))
        obj = Objective(VANISHING, target)
        clean = evaluate(oracle, img, obj).value

        boundary = seg & ~np.roll(seg, 1, axis=0) | seg & ~np.roll(seg, -1, axis=0)
        boundary |= seg & ~np.roll(seg, 1, axis=1) | seg & ~np.roll(seg, -1, axis=1)
        boundary &= seg
        n = 20
        b_idx = np.flatnonzero(boundary.ravel())[:n]
        interior = seg & ~boundary
        i_idx = np.flatnonzero(interior.ravel())[:n]

        def ablate(indices):
            bits = np.zeros(24 * 24, dtype=bool)
            bits[indices] = True
            mask = BinaryMask(bits.reshape(24, 24))
            tex = PerturbationTexture(np.full((24, 24, 3), 0.75))  # background color
            return evaluate(oracle, compose_adversarial(img, mask, tex), obj).value

        assert ablate(b_idx) > ablate(i_idx)
        assert ablate(b_idx) > clean

    def test_deterministic(self):
        img = seeded_image(3)
        obj = Objective(MISLABEL, TARGET)
        v1 = evaluate(toy_edge_detector(7), img, obj).value
        v2 = evaluate(toy_edge_detector(7), img, obj).value
        assert v1 == v2


class TestGradientFiniteDifferences:
    @pytest.mark.parametrize("kind", [VANISHING, MISLABEL, BOXSHIFT])
    @pytest.mark.parametrize("maker", [toy_linear_detector, toy_edge_detector])
    def test_toy_gradients(self, maker, kind):
        oracle = maker(3)
        assert_gradient_matches(oracle, seeded_image(42), Objective(kind, TARGET))

    def test_constant_objective_zero_gradient(self):
        oracle = toy_linear_detector(3)
        g = gradient(oracle, seeded_image(1), Objective(BOXSHIFT, TARGET))
        assert np.count_nonzero(g) == 0


class ForwardOnly(Oracle):
    supports_gradient = False

    def __init__(self, base):
        self.base = base
        self.supported_objectives = base.supported_objectives

    def report(self, image, objective, want_grad=False):
        return self.base.report(image, objective, want_grad=False)


class TestDefense:
    def test_identity_sigma_zero(self):
        base = toy_edge_detector(2)
        wrapped = with_defense(base, DefenseSpec("gaussian", sigma=0.0))
        img = seeded_image(8)
        obj = Objective(VANISHING, TARGET)
        assert wrapped.evaluate(img, obj).value == pytest.approx(
            base.evaluate(img, obj).value, abs=1e-12
        )

    def test_gaussian_gradient_is_exact_transpose(self):
        # chain rule through the linear filter: filtered weights * sigmoid term
        base = toy_linear_detector(5)
        spec = DefenseSpec("gaussian", sigma=1.0)
        wrapped = with_defense(base, spec)
        img = seeded_image(11)
        obj = Objective(VANISHING, ObjectTarget(bbox=(0, 0, 8, 8), category=0))
        g = wrapped.gradient(img, obj)
        w = base.weights(8, 8)
        filt = ImagePlane(np.clip(gaussian_filter_image(img.values, 1.0), 0, 1))
        z = float((w * filt.values).sum() + base._params(8, 8)["b"])
        s = 1.0 / (1.0 + np.exp(-z))
        expected = gaussian_filter_image(-s * w, 1.0)
        assert np.allclose(g, expected, rtol=1e-10, atol=1e-12)

    def test_gaussian_wrapped_matches_finite_differences(self):
        oracle = with_defense(toy_edge_detector(3), DefenseSpec("gaussian", sigma=1.0))
        assert_gradient_matches(oracle, seeded_image(42), Objective(VANISHING, TARGET))

    def test_bilateral_identity_gradient_passthrough(self):
        base = toy_linear_detector(5)
        wrapped = with_defense(base, DefenseSpec("bilateral", sigmas=(1.5, 1.5, 1.5)))
        img = seeded_image(12)
        obj = Objective(VANISHING, ObjectTarget(bbox=(0, 0, 8, 8), category=0))
        filtered = wrapped._filter(img)
        assert np.allclose(wrapped.gradient(img, obj), base.gradient(filtered, obj))

    def test_forward_only_base_rejected(self):
        with pytest.raises(CapabilityError):
            with_defense(ForwardOnly(toy_linear_detector(0)), DefenseSpec("gaussian"))

    def test_defense_validates_sigmas(self):
        with pytest.raises(ContractViolationError):
            DefenseSpec("bilateral", sigmas=(0.0, 1.0, 1.0))


class TestEnsemble:
    def test_requires_two_members(self):
        with pytest.raises(ContractViolationError):
            ensemble_oracle([toy_linear_detector(0)])

    def test_duplicated_member_equals_single(self):
        base = toy_linear_detector(1)
        ens = ensemble_oracle([base, base])
        img = seeded_image(3)
        obj = Objective(VANISHING, TARGET)
        assert ens.evaluate(img, obj).value == pytest.approx(
            base.evaluate(img, obj).value, abs=1e-12
        )

    def test_mean_of_values_and_gradients(self):
        a, b = toy_linear_detector(1), toy_linear_detector(2)
        ens = ensemble_oracle([a, b])
        img = seeded_image(4)
        obj = Objective(VANISHING, TARGET)
        va, vb = a.evaluate(img, obj).value, b.evaluate(img, obj).value
        assert ens.evaluate(img, obj).value == pytest.approx((va + vb) / 2, abs=1e-12)
        ga, gb = a.gradient(img, obj), b.gradient(img, obj)
        assert np.allclose(ens.gradient(img, obj), (ga + gb) / 2)

    def test_forward_only_member_rejected(self):
        with pytest.raises(CapabilityError):
            ensemble_oracle([toy_linear_detector(0), ForwardOnly(toy_linear_detector(1))])

    def test_ensemble_objective_resolves(self):
        members = (toy_edge_detector(1), toy_edge_detector(2))
        obj = Objective("ensemble", TARGET, members=members)
        img = seeded_image(5)
        va = evaluate(members[0], img, Objective(VANISHING, TARGET)).value
        vb = evaluate(members[1], img, Objective(VANISHING, TARGET)).value
        assert evaluate(members[0], img, obj).value == pytest.approx((va + vb) / 2, abs=1e-12)
