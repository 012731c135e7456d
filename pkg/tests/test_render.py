import logging
import math

import numpy as np
import pytest

from levysphere.basis import CoeffField, num_coeffs
from levysphere.errors import ConfigurationError
from levysphere.render import (ColorMap, EquirectGrid, RenderSpec, Transform, exp_transform,
                               read_ppm, render_matrix, to_rgb, write_image, write_matrix_csv)

# exp(1/sqrt(4 pi)): the constant field normalized by its own L2 norm is Y_00
EXP_Y00 = 1.325904398859997


def test_exp_transform_examples(caplog):
    g = EquirectGrid(8, 16)
    for c in (0.1, 5.0):
        const = CoeffField.from_modes(0, {(0, 0): c})
        np.testing.assert_allclose(exp_transform(const, g), EXP_Y00, rtol=1e-7)
    with caplog.at_level(logging.WARNING):
        ones = exp_transform(CoeffField.zeros(3), g)
    assert np.all(ones == 1.0) and ones.shape == (8, 16)
    assert "zero field" in caplog.text
    spec = RenderSpec(8, 16, transform="identity")
    mat = render_matrix(CoeffField.from_modes(0, {(0, 0): math.sqrt(4 * math.pi)}), spec)
    np.testing.assert_allclose(mat, 1.0, rtol=1e-14)


def test_exp_transform_scale_invariant():
    rng = np.random.default_rng(0)
    f = CoeffField(6, rng.normal(size=num_coeffs(6)))
    g = EquirectGrid(10, 20)
    np.testing.assert_allclose(exp_transform(f, g), exp_transform(f.scaled(7.5), g), rtol=1e-12)


def test_grid_layout():
    g = EquirectGrid(5, 8)
    assert g.theta[0] == 0.0 and g.theta[-1] == pytest.approx(math.pi)
    assert g.phi[0] == 0.0 and g.phi[-1] < 2 * math.pi
    with pytest.raises(ConfigurationError):
        EquirectGrid(1, 8)


def test_render_spec_validation():
    with pytest.raises(ConfigurationError):
        RenderSpec(value_range=(1.0, 1.0))
    with pytest.raises(ValueError):
        RenderSpec(cmap="viridis")
    assert RenderSpec(cmap="grayscale").cmap is ColorMap.GRAYSCALE
    assert RenderSpec().transform is Transform.EXP_NORMALIZED


def test_write_image_constant_is_gray(tmp_path):
    path = write_image(np.full((2, 2), 3.0), RenderSpec(2, 2, cmap="grayscale"), tmp_path / "c.ppm")
    px = read_ppm(path)
    assert px.shape == (2, 2, 3)
    assert np.all(px == px[0, 0]) and px[0, 0, 0] == 128


def test_write_image_endpoints(tmp_path):
    mat = np.array([[0.0, 0.25], [0.75, 1.0]])
    spec = RenderSpec(2, 2, cmap="grayscale", value_range=(0.0, 1.0))
    px = read_ppm(write_image(mat, spec, tmp_path / "e.ppm"))
    assert px[0, 0, 0] == 0 and px[1, 1, 0] == 255


def test_header_followed_by_whitespace_like_bytes(tmp_path):
    # first pixel byte 10 is a newline; the reader must not swallow it
    mat = np.array([[10.0, 20.0], [30.0, 255.0]])
    spec = RenderSpec(2, 2, cmap="grayscale", value_range=(0.0, 255.0))
    px = read_ppm(write_image(mat, spec, tmp_path / "w.ppm"))
    assert px[:, :, 0].tolist() == [[10, 20], [30, 255]]


def test_diverging_colors():
    rgb = to_rgb(np.array([[0.0, 0.5, 1.0]]), ColorMap.DIVERGING)
    assert rgb[0, 0].tolist() == [0, 0, 255]
    assert rgb[0, 1].tolist() == [255, 255, 255]
    assert rgb[0, 2].tolist() == [255, 0, 0]


def test_to_rgb_rejects_bad_input():
    with pytest.raises(ValueError):
        to_rgb(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        to_rgb(np.zeros(3))


def test_y10_top_brighter(tmp_path):
    f = CoeffField.from_modes(1, {(1, 0): 1.0})
    spec = RenderSpec(64, 128, cmap="grayscale")
    px = read_ppm(write_image(render_matrix(f, spec), spec, tmp_path / "y10.ppm"))[:, :, 0]
    rows = px.mean(axis=1)
    assert rows[:8].mean() > rows[-8:].mean()
    assert np.all(np.diff(rows) <= 0)


def test_write_image_unwritable(tmp_path):
    target = tmp_path / "missing" / "x.ppm"
    with pytest.raises(OSError, match="missing"):
        write_image(np.zeros((2, 2)), RenderSpec(2, 2), target)


def test_matrix_csv(tmp_path):
    mat = np.arange(6.0).reshape(2, 3) / 7
    lines = write_matrix_csv(mat, tmp_path / "m.csv").read_text().splitlines()
    assert lines[:2] == ["n_theta,n_phi", "2,3"]
    back = np.array([[float(v) for v in row.split(",")] for row in lines[2:]])
    assert np.array_equal(back, mat)
