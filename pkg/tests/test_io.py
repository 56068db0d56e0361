import struct

import numpy as np
import pytest

from distill.renderer import VoxelGrid
from distill.renderer.io import (
    GridFormatError, grid_from_bytes, grid_to_bytes, image_to_ppm, load_grid, ppm_to_image, save_grid, save_ppm,
)


def test_grid_roundtrip(tmp_path, rng):
    g = VoxelGrid(rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3, 3, 3)))
    save_grid(tmp_path / "g.voxg", g)
    back = load_grid(tmp_path / "g.voxg")
    np.testing.assert_array_equal(back.density_logits, g.density_logits.astype(np.float32))
    np.testing.assert_array_equal(back.color_logits, g.color_logits.astype(np.float32))
    assert grid_to_bytes(back) == grid_to_bytes(g)


def test_grid_layout():
    dens = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
    col = 100 + np.arange(24, dtype=np.float64).reshape(3, 2, 2, 2)
    data = grid_to_bytes(VoxelGrid(dens, col))
    assert data[:4] == b"VOXG"
    assert struct.unpack_from("<I", data, 4) == (2,)
    # x fastest: index 1 is (z=0, y=0, x=1)
    assert struct.unpack_from("<2f", data, 8) == (dens[0, 0, 0], dens[0, 0, 1])
    # color block starts after D^3 densities, channel-major
    assert struct.unpack_from("<f", data, 8 + 4 * 8 + 4 * 8) == (col[1, 0, 0, 0],)
    assert len(data) == 8 + 4 * 32


@pytest.mark.parametrize("mutate, offset", [
    (lambda d: b"VOXX" + d[4:], "offset 0"),
    (lambda d: d[:6], "offset 4"),
    (lambda d: d[:-4], "offset 40"),
    (lambda d: d[:20], "offset 8"),
    (lambda d: d[:4] + struct.pack("<I", 0) + d[8:], "offset 4"),
])
def test_grid_errors_carry_offsets(mutate, offset):
    data = grid_to_bytes(VoxelGrid.initial(2))
    with pytest.raises(GridFormatError, match=offset):
        grid_from_bytes(mutate(data))


def test_ppm_rounding_half_up():
    img = np.zeros((3, 1, 4))
    img[0, 0] = [0.5 / 255, 1.5 / 255, 254.49 / 255, 2.0]
    data = image_to_ppm(img)
    assert data.startswith(b"P6\n4 1\n255\n")
    assert list(data[-12::3]) == [1, 2, 254, 255]


def test_ppm_roundtrip(tmp_path, rng):
    img = np.floor(rng.uniform(size=(3, 5, 7)) * 255) / 255
    save_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_allclose(ppm_to_image((tmp_path / "a.ppm").read_bytes()), img, atol=1e-12)


def test_ppm_pixel_bytes_that_look_like_whitespace():
    img = np.full((3, 1, 2), 32 / 255)  # 0x20 is ASCII space
    np.testing.assert_allclose(ppm_to_image(image_to_ppm(img)), img, atol=1e-12)


@pytest.mark.parametrize("data", [b"P6\n2", b"P5\n1 1\n255\n\0", b"P6\n1 1\n255\n\0"])
def test_ppm_rejects_bad_input(data):
    with pytest.raises(ValueError):
        ppm_to_image(data)


def test_ppm_needs_three_channels():
    with pytest.raises(ValueError):
        image_to_ppm(np.zeros((4, 2, 2)))
