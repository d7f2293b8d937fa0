"""Gradient scale factors, coordinate mappings, Jacobian determinants."""
import numpy as np
import pytest

from radscale import (ContractionMapping, GradScaleConfig, GradScaleMode,
                      IdentityMapping, InputError, SingularityError,
                      estimate_sigma, look_at, make_mapping,
                      numerical_jacobian_det, scale_factor,
                      scale_sample_gradients)
from radscale.geometry import Camera


def cfg(mode, **kw):
    return GradScaleConfig(mode=mode, **kw)


class TestScaleFactor:
    def test_none_is_unity(self, rng):
        d = rng.uniform(0.0, 5.0, 100)
        assert np.all(scale_factor(d, cfg("none")) == 1.0)

    def test_quadratic(self, rng):
        d = rng.uniform(0.0, 5.0, 100)
        assert np.allclose(scale_factor(d, cfg("quadratic")), d * d, rtol=1e-15)

    def test_clamped(self):
        d = np.array([0.0, 0.1, 0.5, 0.9, 1.0, 1.5, 2.0, 10.0])
        expect = np.minimum(1.0, d * d)
        assert np.allclose(scale_factor(d, cfg("clamped")), expect, rtol=1e-15)

    def test_clamped_sigma_rescales_knee(self):
        d = np.linspace(0.0, 6.0, 200)
        s = scale_factor(d, cfg("clamped-sigma", sigma=2.5))
        assert np.allclose(s, np.minimum(1.0, (d / 2.5) ** 2), rtol=1e-14)
        # knee sits exactly at delta = sigma
        assert s[np.searchsorted(d, 2.5)] == pytest.approx(1.0, abs=1e-2)

    def test_jacobian_identity_equals_clamped(self, rng):
        d = rng.uniform(0.0, 3.0, 50)
        pts = rng.normal(size=(50, 3))
        a = scale_factor(d, cfg("jacobian", mapping=IdentityMapping()), pts)
        b = scale_factor(d, cfg("clamped"))
        assert np.array_equal(a, b)

    def test_jacobian_needs_points(self):
        c = cfg("jacobian", mapping=IdentityMapping())
        with pytest.raises(InputError):
            scale_factor(np.ones(4), c)

    def test_singular_mapping_raises(self):
        collapse_all = lambda p: p * 0.0
        c = cfg("jacobian", mapping=make_mapping(collapse_all))
        with pytest.raises(SingularityError):
            scale_factor(np.ones(3), c, np.ones((3, 3)))

    def test_scale_sample_gradients_multiplies_both(self, rng):
        d_sigma = rng.normal(size=20)
        d_rgb = rng.normal(size=(20, 3))
        delta = rng.uniform(0.2, 2.0, 20)
        s, c3 = scale_sample_gradients(d_sigma.copy(), d_rgb.copy(), delta,
                                       cfg("clamped"))
        f = np.minimum(1.0, delta ** 2)
        assert np.allclose(s, d_sigma * f)
        assert np.allclose(c3, d_rgb * f[:, None])


class TestContraction:
    def test_identity_inside_unit_ball(self, rng):
        m = ContractionMapping()
        pts = rng.normal(size=(100, 3))
        pts *= (rng.uniform(0.05, 0.999, 100) / np.linalg.norm(pts, axis=1))[:, None]
        assert np.allclose(m.apply(pts), pts)
        assert np.allclose(m.jacobian_det(pts), 1.0)

    def test_outside_maps_to_shell(self, rng):
        m = ContractionMapping()
        pts = rng.normal(size=(200, 3))
        pts *= (rng.uniform(1.001, 50.0, 200) / np.linalg.norm(pts, axis=1))[:, None]
        out = m.apply(pts)
        r = np.linalg.norm(pts, axis=1)
        rn = np.linalg.norm(out, axis=1)
        assert np.allclose(rn, 2.0 - 1.0 / r, rtol=1e-12)
        assert np.all(rn < 2.0)
        # direction preserved
        assert np.allclose(out / rn[:, None], pts / r[:, None], atol=1e-12)

    def test_det_matches_finite_difference(self, rng):
        m = ContractionMapping()
        pts = rng.normal(size=(50, 3))
        pts *= (rng.uniform(1.1, 4.0, 50) / np.linalg.norm(pts, axis=1))[:, None]
        ana = m.jacobian_det(pts)
        num = numerical_jacobian_det(m.apply, pts)
        assert np.allclose(ana, num, rtol=1e-4)

    def test_det_continuous_at_unit_sphere(self):
        m = ContractionMapping()
        p_in = np.array([[0.0, 0.0, 1.0 - 1e-9]])
        p_out = np.array([[0.0, 0.0, 1.0 + 1e-9]])
        assert np.isclose(m.jacobian_det(p_in)[0], 1.0)
        assert np.isclose(m.jacobian_det(p_out)[0], 1.0, rtol=1e-7)


class TestConfig:
    def test_parse_and_aliases(self):
        assert GradScaleMode.parse("clamped") is GradScaleMode.CLAMPED
        assert GradScaleMode.parse("clamped-sigma") is GradScaleMode.CLAMPED_SIGMA
        with pytest.raises(InputError):
            GradScaleMode.parse("bogus")

    def test_config_from_string_mode(self):
        c = GradScaleConfig(mode="quadratic")
        assert c.mode is GradScaleMode.QUADRATIC

    def test_sigma_must_be_positive(self):
        with pytest.raises(InputError):
            GradScaleConfig(mode="clamped-sigma", sigma=0.0)

    def test_jacobian_defaults_to_identity_mapping(self):
        c = GradScaleConfig(mode="jacobian")
        assert isinstance(c.mapping, IdentityMapping)

    def test_make_mapping_dispatch(self):
        assert isinstance(make_mapping("identity"), IdentityMapping)
        assert isinstance(make_mapping("contract"), ContractionMapping)
        assert isinstance(make_mapping(None), IdentityMapping)
        with pytest.raises(InputError):
            make_mapping("nope")


class TestSigmaEstimate:
    def test_median_camera_distance(self):
        def cam_at(p):
            return Camera(rotation=look_at(p, (0, 0, 0)), position=p,
                          focal=30.0, width=8, height=8, far=20.0)
        cams = [cam_at((d, 0.0, 0.0)) for d in (-1.0, -3.0, 5.0)]
        # centroid x = 1/3; distances 4/3, 10/3, 14/3; median 10/3
        assert estimate_sigma(cams) == pytest.approx(10.0 / 3.0, rel=1e-12)

    def test_needs_two_cameras(self):
        c = Camera(rotation=look_at((0, 0, 2), (0, 0, 0)), position=(0, 0, 2),
                   focal=30.0, width=8, height=8, far=10.0)
        with pytest.raises(InputError):
            estimate_sigma([c])
