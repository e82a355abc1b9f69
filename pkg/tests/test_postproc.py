import numpy as np
import pytest

from tobesim import (
    ArrayConfig,
    BModeImage,
    DomainError,
    ImageGrid,
    Phantom,
    VolumeSpec,
    cross_plane,
    envelope,
    log_compress,
    stitch_volume,
)


class TestEnvelope:
    def test_pure_cosine_column_flat_envelope(self):
        n = 400
        rf = np.cos(2 * np.pi * 50 * np.arange(n) / n)[:, None] * 0.7
        env = envelope(rf)
        interior = env[40:-40, 0]
        assert interior == pytest.approx(0.7, rel=0.02)

    def test_zero_in_zero_out(self):
        assert not envelope(np.zeros((16, 4))).any()

    def test_sign_invariance(self, rng):
        rf = rng.standard_normal((64, 8))
        assert envelope(-rf) == pytest.approx(envelope(rf))

    def test_homogeneity(self, rng):
        rf = rng.standard_normal((64, 8))
        assert envelope(3.5 * rf) == pytest.approx(3.5 * envelope(rf))

    def test_degenerate_depth_axis_rejected(self):
        with pytest.raises(DomainError):
            envelope(np.zeros((3, 10)))


class TestLogCompress:
    def test_reference_is_zero_db(self, rng):
        env = np.abs(rng.standard_normal((32, 4))) + 0.1
        db = log_compress(env)
        assert db.max() == 0.0

    def test_decade_is_minus_twenty(self):
        env = np.array([[1.0, 0.1], [0.5, 1.0], [0.25, 0.3], [0.7, 0.01]])
        db = log_compress(env, 60.0)
        assert db[0, 1] == pytest.approx(-20.0)

    def test_zero_clamps_to_floor(self):
        env = np.array([[1.0], [0.0], [0.5], [0.2]])
        db = log_compress(env, 40.0)
        assert db[1, 0] == -40.0

    def test_all_zero_rejected(self):
        with pytest.raises(DomainError):
            log_compress(np.zeros((8, 8)))

    def test_scale_invariance(self, rng):
        env = np.abs(rng.standard_normal((32, 4)))
        assert log_compress(7.0 * env) == pytest.approx(log_compress(env))


def _plane(grid, rng):
    return BModeImage.from_rf(grid, rng.standard_normal((grid.nz, grid.nx)))


class TestStitchVolume:
    def _grid(self):
        return ImageGrid(x_min=-1e-3, x_max=1e-3, nx=21, z_min=4e-3, z_max=6e-3, nz=33)

    def test_single_plane_volume(self, rng):
        grid = self._grid()
        plane = _plane(grid, rng)
        vol = stitch_volume([plane], VolumeSpec(1, 300e-6, 8e-3))
        assert vol.env.shape == (1, 33, 21)
        assert (vol.plane(0)[0] == plane.env).all()
        assert vol.extent_y_m == 0.0

    def test_eight_planes_extent(self, rng):
        grid = self._grid()
        planes = [_plane(grid, rng) for _ in range(8)]
        vol = stitch_volume(planes, VolumeSpec(8, 300e-6, 8e-3))
        assert vol.extent_y_m == pytest.approx(2.1e-3)
        assert vol.y_m == pytest.approx(vol.y_m[::-1] * -1)  # centered
        for k in range(8):
            assert (vol.plane(k)[0] == planes[k].env).all()
            assert (vol.plane(k)[1] == planes[k].db).all()

    def test_paper_scale_extent(self, rng):
        grid = self._grid()
        planes = [_plane(grid, rng) for _ in range(64)]
        vol = stitch_volume(planes, VolumeSpec(64, 300e-6, 35e-3))
        assert vol.extent_y_m == pytest.approx(18.9e-3)

    def test_plane_count_and_grid_mismatch(self, rng):
        grid = self._grid()
        other = ImageGrid(x_min=-1e-3, x_max=1e-3, nx=20, z_min=4e-3, z_max=6e-3, nz=33)
        with pytest.raises(DomainError):
            stitch_volume([_plane(grid, rng)], VolumeSpec(2, 300e-6, 8e-3))
        with pytest.raises(DomainError):
            stitch_volume([_plane(grid, rng), _plane(other, rng)],
                          VolumeSpec(2, 300e-6, 8e-3))

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            VolumeSpec(0, 300e-6, 8e-3)
        with pytest.raises(DomainError):
            VolumeSpec(4, 0.0, 8e-3)


class TestCrossPlane:
    CFG = dict(center_freq_hz=5e6, sampling_freq_hz=20e6, sound_speed_m_s=1540.0)

    def _grid(self):
        return ImageGrid(x_min=-2e-3, x_max=2e-3, nx=41, z_min=6e-3, z_max=10e-3, nz=81)

    def test_transpose_symmetric_phantom_matches(self):
        cfg = ArrayConfig(n=8, **self.CFG)
        ph = Phantom([
            [1.0e-3, -0.5e-3, 8e-3, 1.0],
            [-0.5e-3, 1.0e-3, 8e-3, 1.0],
            [0.0, 0.0, 7e-3, 0.7],
        ])
        p1, p2 = cross_plane(cfg, ph, 8e-3, self._grid())
        assert np.abs(p1.env - p2.env).max() <= 1e-6 * p1.env.max()

    def test_asymmetric_phantom_differs(self):
        cfg = ArrayConfig(n=8, **self.CFG)
        ph = Phantom([[1.0e-3, 0.0, 8e-3, 1.0], [-0.8e-3, 0.4e-3, 7e-3, 1.0]])
        p1, p2 = cross_plane(cfg, ph, 8e-3, self._grid())
        assert np.abs(p1.env - p2.env).max() > 0.1 * p1.env.max()

    def test_offset_scatterer_appears_in_its_plane_only(self):
        cfg = ArrayConfig(n=8, **self.CFG)
        grid = self._grid()
        x0 = 0.8e-3
        p1, p2 = cross_plane(cfg, Phantom([[x0, 0.0, 8e-3, 1.0]]), 8e-3, grid)
        ix1 = np.unravel_index(np.argmax(p1.env), p1.env.shape)[1]
        assert abs(grid.x()[ix1] - x0) <= 0.3e-3
        # the wire sits 0.8 mm off the orthogonal plane: much weaker there
        assert p2.env.max() < 0.5 * p1.env.max()
        q1, q2 = cross_plane(cfg, Phantom([[0.0, 0.0, 8e-3, 1.0]]), 8e-3, grid)
        jx1 = np.unravel_index(np.argmax(q1.env), q1.env.shape)[1]
        jx2 = np.unravel_index(np.argmax(q2.env), q2.env.shape)[1]
        assert abs(grid.x()[jx1]) <= 0.2e-3 and abs(grid.x()[jx2]) <= 0.2e-3
        assert q2.env.max() == pytest.approx(q1.env.max(), rel=1e-9)

    def test_requires_centered_plane(self):
        cfg = ArrayConfig(n=8, **self.CFG)
        grid = ImageGrid(x_min=-1e-3, x_max=1e-3, nx=11, z_min=5e-3, z_max=7e-3,
                         nz=17, y_plane=1e-3)
        with pytest.raises(DomainError):
            cross_plane(cfg, Phantom([[0.0, 0.0, 6e-3, 1.0]]), 6e-3, grid)
