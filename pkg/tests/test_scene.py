import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sunif.optics import spatial_coherence
from sunif.scene import (SCENE_KINDS, IndirectKernel, Scene, SurfaceLayer, diagonal_response,
                         indirect_response, make_test_scene)

KBAR = 2 * math.pi / 0.55


def _layer(**kw):
    return SurfaceLayer.uniform((4, 5), **kw)


def test_single_opaque_layer():
    scene = Scene((_layer(depth=500.0),))
    assert diagonal_response(scene, (1, 2)) == [(500.0, 1 + 0j)]


def test_back_layer_scaled_by_round_trip_transparency():
    front = _layer(depth=100.0, amplitude=0.6, transparency=0.5)
    back = _layer(depth=4100.0, amplitude=1.0)
    (d0, a0), (d1, a1) = diagonal_response(Scene((front, back)), (0, 0))
    assert (d0, d1) == (100.0, 4100.0)
    assert a0 == pytest.approx(0.6)
    assert a1 == pytest.approx(0.25)


def test_zero_amplitude_layer_omitted():
    scene = Scene((_layer(depth=10.0, amplitude=0.0, transparency=1.0), _layer(depth=20.0)))
    assert diagonal_response(scene, (0, 0)) == [(20.0, 1 + 0j)]


def test_out_of_bounds_pixel():
    scene = Scene((_layer(depth=0.0),))
    with pytest.raises(IndexError):
        diagonal_response(scene, (4, 0))
    with pytest.raises(IndexError):
        diagonal_response(scene, (0, -1))


@pytest.mark.parametrize("kw", [
    dict(depth=np.nan),
    dict(depth=0.0, amplitude=-0.1),
    dict(depth=0.0, transparency=1.5),
    dict(depth=0.0, microphase=np.full((4, 5), 7.0)),
])
def test_layer_validation(kw):
    with pytest.raises(ValueError):
        _layer(**kw)


def test_layers_are_immutable():
    layer = _layer(depth=1.0)
    with pytest.raises(ValueError):
        layer.depth[0, 0] = 3.0


def test_scene_requires_matching_layers():
    with pytest.raises(ValueError):
        Scene((SurfaceLayer.uniform((2, 2), 0.0), SurfaceLayer.uniform((3, 2), 0.0)))
    with pytest.raises(ValueError):
        Scene(())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_amplitudes_do_not_depend_on_microphase(seed):
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0, 1, (3, 3))
    t = rng.uniform(0, 1, (3, 3))
    phases = [rng.uniform(0, 2 * np.pi, (3, 3)) for _ in range(2)]
    ref = None
    for phi in phases:
        scene = Scene((SurfaceLayer.uniform((3, 3), 0.0, amp, phi, t), SurfaceLayer.uniform((3, 3), 50.0, 1.0, phi)))
        mags = [abs(a) for _, a in diagonal_response(scene, (1, 1))]
        if ref is None:
            ref = mags
        assert mags == pytest.approx(ref, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=5))
def test_round_trip_power_bounded_by_front_transparency(layers):
    built = [SurfaceLayer.uniform((1, 1), 10.0 * k, a, None, t) for k, (a, t) in enumerate(layers)]
    scene = Scene(tuple(built))
    through = 1.0
    for (_, amp), (a, t) in zip(scene.effective_layers(), layers):
        assert abs(amp[0, 0]) ** 2 <= through**4 + 1e-15
        through *= t


def test_kernel_rejects_diagonal_and_negative_weights():
    with pytest.raises(ValueError):
        IndirectKernel([(0, 0)], [1.0], [0.0])
    with pytest.raises(ValueError):
        IndirectKernel([(0, 1)], [-1.0], [0.0])


def test_indirect_zero_kernel():
    scene = Scene((_layer(depth=0.0),), kernel=IndirectKernel([(0, 1), (1, 0)], [0.0, 0.0], [5.0, 2.0]))
    assert indirect_response(scene, (1, 1), 10.0, KBAR) == 0


def test_indirect_empty_kernel():
    scene = Scene((_layer(depth=0.0),), kernel=IndirectKernel(np.zeros((0, 2)), [], []))
    assert indirect_response(scene, (1, 1), 10.0, KBAR) == 0


def test_indirect_at_sinc_zero():
    pitch = 3.7
    # 2 * pitch / L_S = pi puts a one-pixel offset on the first zero
    ls = 2 * pitch / math.pi
    scene = Scene((_layer(depth=0.0),), pixel_pitch=pitch, kernel=IndirectKernel([(0, 1)], [1.0], [0.0]))
    assert abs(indirect_response(scene, (0, 0), ls, KBAR)) < 1e-15


def test_indirect_at_quarter_period():
    pitch = 3.7
    dth = math.pi / 2 / (2 * pitch * KBAR)
    ls = 1 / (KBAR * dth)
    scene = Scene((_layer(depth=0.0),), pixel_pitch=pitch, kernel=IndirectKernel([(1, 0)], [1.0], [1.3]))
    value = indirect_response(scene, (0, 0), ls, KBAR)
    assert abs(value) == pytest.approx(2 / math.pi, rel=1e-12)
    assert abs(value) == pytest.approx(spatial_coherence(pitch, KBAR, dth), rel=1e-12)


def test_indirect_limits():
    kernel = IndirectKernel([(0, 1), (0, -1), (2, 0)], [0.2, 0.3, 0.1], [0.0, 0.0, 0.0])
    scene = Scene((_layer(depth=0.0),), kernel=kernel)
    assert indirect_response(scene, (1, 2), math.inf, KBAR) == pytest.approx(kernel.mass)
    assert abs(indirect_response(scene, (1, 2), 1e-6, KBAR)) < 1e-6
    # partners outside the image are dropped
    assert indirect_response(scene, (3, 0), math.inf, KBAR) == pytest.approx(0.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 2 / math.pi), st.integers(1, 4), st.integers(1, 4),
       st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_indirect_below_pitch_stays_under_sidelobe_bound(ratio, r, c, weights, extra):
    # |sinc| <= 0.2172 beyond its first zero, reached for L_S <= 2 * pitch / pi
    pitch = 3.7
    kernel = IndirectKernel([(r, 0), (-r, c), (0, -c), (r, c)], weights, extra)
    scene = Scene((SurfaceLayer.uniform((12, 12), 0.0),), pixel_pitch=pitch, kernel=kernel)
    value = indirect_response(scene, (6, 6), ratio * pitch, KBAR)
    assert abs(value) <= 0.2173 * kernel.mass + 1e-12


def test_ring_kernel():
    k = IndirectKernel.ring(3, 1.0, 2.0)
    assert k.radius == 3.0 and k.mass == pytest.approx(1.0)
    assert len(k.offsets) == 4


def test_make_flat_is_constant():
    scene = make_test_scene("flat", depth=600.0)
    assert scene.shape == (64, 64)
    assert np.all(scene.layers[0].depth == 600.0)


def test_make_step_height_exact():
    d = make_test_scene("step", depth=10.0, step_height=50.0).layers[0].depth
    assert d.max() - d.min() == 50.0
    assert np.all(d[:, :32] == 10.0) and np.all(d[:, 32:] == 60.0)


def test_make_diffuser_gap():
    scene = make_test_scene("two_layer_diffuser", gap=4000.0)
    front, back = scene.layers
    assert np.all(back.depth - front.depth == 4000.0)
    assert np.all(front.transparency > 0) and np.all(front.amplitude > 0)
    assert back.amplitude.std() > 0


def test_make_checker():
    amp = make_test_scene("checker_reflectance", square=4, low=0.2, high=0.9).layers[0].amplitude
    assert set(np.unique(amp)) == {0.2, 0.9}
    assert amp[0, 0] != amp[0, 4] and amp[0, 0] == amp[4, 4]


@pytest.mark.parametrize("kind", SCENE_KINDS)
def test_make_scene_deterministic(kind):
    a = make_test_scene(kind, width=16, height=8, seed=3)
    b = make_test_scene(kind, width=16, height=8, seed=3)
    c = make_test_scene(kind, width=16, height=8, seed=4)
    for la, lb, lc in zip(a.layers, b.layers, c.layers):
        assert np.array_equal(la.microphase, lb.microphase)
        assert np.array_equal(la.depth, lb.depth)
        assert not np.array_equal(la.microphase, lc.microphase)


def test_make_scene_without_speckle():
    scene = make_test_scene("ramp", speckle=False, slope=2.0)
    assert np.all(scene.layers[0].microphase == 0)
    assert scene.layers[0].depth[0, 5] == 10.0


def test_make_scene_errors():
    with pytest.raises(ValueError):
        make_test_scene("sphere")
    with pytest.raises(ValueError):
        make_test_scene("flat", gap=3.0)
