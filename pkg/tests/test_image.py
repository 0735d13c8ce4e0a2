import numpy as np
import pytest

from rlab.container import load_arrays, save_arrays
from rlab.exceptions import FormatError, GeometryError, ShapeError
from rlab.image import (
    as_image,
    l2_distance,
    linf_distance,
    make_patch_grid,
    patch_view,
    read_png,
    read_raw,
    write_png,
    write_raw,
)
from rlab.seeding import rng_from

from conftest import random_image


class TestDistances:
    def test_identity(self, image):
        assert l2_distance(image, image) == 0.0
        assert linf_distance(image, image) == 0.0

    def test_single_element(self):
        a = np.zeros((1, 2, 2), dtype=np.float32)
        b = a.copy()
        b[0, 0, 0] = 0.5
        assert l2_distance(a, b) == pytest.approx(0.5)

    def test_three_four_five(self):
        a = np.zeros((1, 1, 2), dtype=np.float32)
        b = a.copy()
        b[0, 0, 0] = 0.3
        b[0, 0, 1] = 0.4
        assert l2_distance(a, b) == pytest.approx(0.5, abs=1e-7)

    def test_linf_picks_max(self):
        a = np.zeros((1, 1, 3), dtype=np.float32)
        b = np.array([[[0.02, 0.07, 0.01]]], dtype=np.float32)
        assert linf_distance(a, b) == pytest.approx(0.07)

    def test_linf_uniform_shift(self):
        a = np.full((1, 3, 3), 0.4, dtype=np.float32)
        b = a + np.float32(0.1)
        assert linf_distance(a, b) == pytest.approx(0.1)

    def test_shape_mismatch(self, image):
        with pytest.raises(ShapeError):
            l2_distance(image, image[:, :4, :])
        with pytest.raises(ShapeError):
            linf_distance(image, image[:, :, :4])

    def test_metric_properties(self):
        rng = rng_from("metric-props")
        for _ in range(50):
            a = random_image(rng, (2, 4, 4))
            b = random_image(rng, (2, 4, 4))
            assert l2_distance(a, b) >= 0.0
            assert l2_distance(a, b) == pytest.approx(l2_distance(b, a))
            assert linf_distance(a, b) == pytest.approx(linf_distance(b, a))
            assert (l2_distance(a, b) == 0.0) == np.array_equal(a, b)


class TestPatchGrid:
    def test_counts(self):
        img32 = np.zeros((3, 32, 32), dtype=np.float32)
        assert make_patch_grid(img32, 2).patch_count == 256
        img224 = np.zeros((3, 224, 224), dtype=np.float32)
        assert make_patch_grid(img224, 2).patch_count == 12544

    def test_non_divisible(self):
        img = np.zeros((1, 10, 10), dtype=np.float32)
        with pytest.raises(GeometryError):
            make_patch_grid(img, 3)

    def test_bad_patch_size(self, image):
        with pytest.raises(GeometryError):
            make_patch_grid(image, 0)

    def test_tiling_is_exact_partition(self, image):
        grid = make_patch_grid(image, 2)
        seen = np.zeros(image.shape[1:], dtype=int)
        for i in range(grid.patch_count):
            r0, r1, c0, c1 = grid.rect(i)
            seen[r0:r1, c0:c1] += 1
        assert np.all(seen == 1)

    def test_rect_roundtrip(self, image):
        grid = make_patch_grid(image, 4)
        for i in range(grid.patch_count):
            r, c = grid.coords(i)
            assert i == r * grid.cols + c

    def test_patch_view_writes_through(self, image):
        grid = make_patch_grid(image, 2)
        img = image.copy()
        patch_view(img, grid, 3)[...] = 0.0
        r0, r1, c0, c1 = grid.rect(3)
        assert np.all(img[:, r0:r1, c0:c1] == 0.0)

    def test_index_out_of_range(self, image):
        grid = make_patch_grid(image, 2)
        with pytest.raises(GeometryError):
            grid.rect(grid.patch_count)


class TestPerturbation:
    def test_roundtrip_bit_exact(self):
        from rlab.image import apply_perturbation, perturbation

        rng = rng_from("perturbation")
        for _ in range(200):
            original = random_image(rng, (3, 4, 4))
            adversarial = random_image(rng, (3, 4, 4))
            delta = perturbation(original, adversarial)
            rebuilt = apply_perturbation(original, delta)
            assert np.array_equal(rebuilt, adversarial)

    def test_boundary_values(self):
        from rlab.image import apply_perturbation, perturbation

        original = np.array([[[0.0, 1.0, 0.0]]], dtype=np.float32)
        adversarial = np.array([[[1.0, 0.0, np.nextafter(np.float32(0), np.float32(1))]]], dtype=np.float32)
        assert np.array_equal(
            apply_perturbation(original, perturbation(original, adversarial)), adversarial
        )

    def test_roundtrip_on_engine_outputs(self):
        from rlab.filters import FilterSpec, apply_filter_patch
        from rlab.image import apply_perturbation, make_patch_grid, perturbation

        rng = rng_from("perturbation-engine")
        for kind in ("gaussian_noise", "dead_pixel", "brightness"):
            original = random_image(rng, (1, 4, 4))
            grid = make_patch_grid(original, 2)
            adv, _ = apply_filter_patch(original, grid, 1, FilterSpec(kind), seed=3)
            assert np.array_equal(apply_perturbation(original, perturbation(original, adv)), adv)

    def test_clamps_to_unit_box(self):
        from rlab.image import apply_perturbation

        original = np.full((1, 1, 2), 0.9, dtype=np.float32)
        out = apply_perturbation(original, np.array([[[0.5, -1.5]]]))
        assert np.array_equal(out, np.array([[[1.0, 0.0]]], dtype=np.float32))


class TestValidation:
    def test_rejects_out_of_range(self):
        with pytest.raises(FormatError):
            as_image(np.full((1, 2, 2), 1.5, dtype=np.float32))

    def test_rejects_flat_size_mismatch(self):
        with pytest.raises(ShapeError):
            as_image(np.zeros(47, dtype=np.float32), shape=(3, 4, 4))


class TestRawFormat:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = rng_from("raw-roundtrip")
        for _ in range(10):
            img = random_image(rng, (3, 4, 6))
            path = tmp_path / "img.raw"
            write_raw(path, img)
            back = read_raw(path)
            assert back.dtype == np.float32
            assert np.array_equal(back, img)

    def test_extreme_values_roundtrip(self, tmp_path):
        img = np.array([[[0.0, 1.0], [np.nextafter(np.float32(0), np.float32(1)), 0.5]]], dtype=np.float32)
        path = tmp_path / "edge.raw"
        write_raw(path, img)
        assert np.array_equal(read_raw(path), img)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.raw"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError):
            read_raw(path)

    def test_truncated_payload(self, tmp_path):
        import struct

        path = tmp_path / "trunc.raw"
        payload = np.zeros(47, dtype="<f4").tobytes()  # declared 3x4x4 = 48
        path.write_bytes(b"RLT1" + struct.pack("<III", 3, 4, 4) + payload)
        with pytest.raises(FormatError):
            read_raw(path)

    def test_out_of_range_value(self, tmp_path):
        import struct

        path = tmp_path / "range.raw"
        data = np.full(4, 1.5, dtype="<f4").tobytes()
        path.write_bytes(b"RLT1" + struct.pack("<III", 1, 2, 2) + data)
        with pytest.raises(FormatError):
            read_raw(path)


class TestPng:
    def test_all_zeros_roundtrip(self, tmp_path):
        img = np.zeros((3, 4, 4), dtype=np.float32)
        path = tmp_path / "zero.png"
        write_png(path, img)
        assert np.array_equal(read_png(path), img)

    def test_half_quantizes_to_128(self, tmp_path):
        img = np.full((1, 2, 2), 0.5, dtype=np.float32)
        path = tmp_path / "half.png"
        write_png(path, img)
        back = read_png(path)
        assert np.all(back == np.float32(128.0 / 255.0))

    def test_quantization_error_bound(self, tmp_path):
        rng = rng_from("png-bound")
        img = random_image(rng, (3, 8, 8))
        path = tmp_path / "rand.png"
        write_png(path, img)
        back = read_png(path)
        assert np.max(np.abs(back - img)) <= 1.0 / 255.0 + 1e-7

    def test_four_channels_rejected(self, tmp_path):
        img = np.zeros((4, 2, 2), dtype=np.float32)
        with pytest.raises(FormatError):
            write_png(tmp_path / "four.png", img)

    def test_grayscale_shape(self, tmp_path):
        img = np.full((1, 3, 5), 0.25, dtype=np.float32)
        path = tmp_path / "gray.png"
        write_png(path, img)
        assert read_png(path).shape == (1, 3, 5)


class TestContainer:
    def test_named_arrays_roundtrip(self, tmp_path):
        rng = rng_from("container")
        arrays = {
            "w1": rng.normal(size=(4, 7)).astype(np.float32),
            "b1": rng.normal(size=4).astype(np.float32),
            "cube": rng.normal(size=(2, 3, 4)).astype(np.float32),
            "scalar": np.float32(3.5),
        }
        path = tmp_path / "weights.rlt"
        save_arrays(path, arrays)
        back = load_arrays(path)
        assert set(back) == set(arrays)
        for name, expected in arrays.items():
            assert back[name].shape == np.asarray(expected).shape
            assert np.array_equal(back[name], np.asarray(expected, dtype=np.float32))

    def test_values_not_range_checked(self, tmp_path):
        path = tmp_path / "neg.rlt"
        save_arrays(path, {"w": np.array([-5.0, 7.0], dtype=np.float32)})
        assert np.array_equal(load_arrays(path)["w"], np.array([-5.0, 7.0], dtype=np.float32))

    def test_truncated_container(self, tmp_path):
        path = tmp_path / "ok.rlt"
        save_arrays(path, {"w": np.ones((2, 2), dtype=np.float32)})
        clipped = path.read_bytes()[:-5]
        bad = tmp_path / "bad.rlt"
        bad.write_bytes(clipped)
        with pytest.raises(FormatError):
            load_arrays(bad)
