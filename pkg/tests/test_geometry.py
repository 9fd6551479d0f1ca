import numpy as np
import pytest

from zfseld.errors import InvalidDirectionError
from zfseld.geometry import (
    FOA_ROTATIONS,
    N_FOA_ROTATIONS,
    angular_distance,
    cartesian_to_spherical,
    decode_accdoa,
    encode_accdoa,
    foa_gains,
    pairwise_angular_distance,
    rotate_direction,
    rotation_matrix,
    spherical_to_cartesian,
)


def random_unit(rng, n=1):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestEncodeDecode:
    def test_identity_case(self):
        np.testing.assert_allclose(encode_accdoa(1.0, np.array([1.0, 0, 0])), [1, 0, 0])

    def test_zero_activity(self):
        np.testing.assert_allclose(encode_accdoa(0.0, np.array([0.0, 1, 0])), [0, 0, 0])

    def test_scalar_multiple(self):
        np.testing.assert_allclose(encode_accdoa(0.5, np.array([0.0, 0, 1])), [0, 0, 0.5])

    def test_non_unit_doa_rejected(self):
        with pytest.raises(InvalidDirectionError):
            encode_accdoa(0.7, np.array([1.0, 1.0, 0.0]))

    def test_decode_normalizes(self):
        activity, doa = decode_accdoa(np.array([0.0, 0, 0.5]))
        assert activity == pytest.approx(0.5)
        np.testing.assert_allclose(doa, [0, 0, 1])

    def test_decode_zero_vector(self):
        activity, doa = decode_accdoa(np.zeros(3))
        assert activity == 0.0
        assert doa is None

    def test_decode_345(self):
        activity, doa = decode_accdoa(np.array([0.6, 0.8, 0.0]))
        assert activity == pytest.approx(1.0)
        np.testing.assert_allclose(doa, [0.6, 0.8, 0.0])

    def test_roundtrip_property(self):
        rng = np.random.default_rng(7)
        dirs = random_unit(rng, 1000)
        acts = rng.uniform(1e-6, 1.0, 1000)
        for a, r in zip(acts, dirs):
            a2, r2 = decode_accdoa(encode_accdoa(a, r))
            assert abs(a2 - a) < 1e-6
            assert np.max(np.abs(r2 - r)) < 1e-6

    def test_norm_equals_activity(self):
        rng = np.random.default_rng(8)
        for a, r in zip(rng.uniform(0, 1, 100), random_unit(rng, 100)):
            assert np.linalg.norm(encode_accdoa(a, r)) == pytest.approx(a, abs=1e-12)


class TestAngularDistance:
    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ((1, 0, 0), (1, 0, 0), 0.0),
            ((1, 0, 0), (0, 1, 0), 90.0),
            ((1, 0, 0), (-1, 0, 0), 180.0),
        ],
    )
    def test_known_angles(self, a, b, expected):
        assert angular_distance(np.array(a, float), np.array(b, float)) == pytest.approx(expected)

    def test_rejects_non_unit(self):
        with pytest.raises(InvalidDirectionError):
            angular_distance(np.array([2.0, 0, 0]), np.array([1.0, 0, 0]))

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b, c = random_unit(rng, 3)
            dab = angular_distance(a, b)
            dba = angular_distance(b, a)
            dac = angular_distance(a, c)
            dcb = angular_distance(c, b)
            assert dab == pytest.approx(dba, abs=1e-9)
            assert dab <= dac + dcb + 1e-9
            assert 0.0 <= dab <= 180.0

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(12)
        a = random_unit(rng, 4)
        b = random_unit(rng, 3)
        mat = pairwise_angular_distance(a, b)
        for i in range(4):
            for j in range(3):
                assert mat[i, j] == pytest.approx(angular_distance(a[i], b[j]))


class TestFoaGains:
    def sh_oracle(self, az_deg, el_deg):
        # real first-order spherical harmonics, SN3D, ACN order (W, Y, Z, X)
        az, el = np.radians(az_deg), np.radians(el_deg)
        return np.array(
            [1.0, np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)]
        )

    @pytest.mark.parametrize("az,el", [(0, 0), (90, 0), (0, 90), (45, -30), (-120, 60)])
    def test_against_spherical_harmonics(self, az, el):
        np.testing.assert_allclose(foa_gains(az, el), self.sh_oracle(az, el), atol=1e-12)

    def test_first_order_energy_identity(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            az = rng.uniform(-180, 180)
            el = rng.uniform(-90, 90)
            w, y, z, x = foa_gains(az, el)
            assert w == 1.0
            assert x * x + y * y + z * z == pytest.approx(1.0, abs=1e-12)


class TestSphericalConversions:
    def test_roundtrip_away_from_poles(self):
        rng = np.random.default_rng(14)
        for _ in range(500):
            az = rng.uniform(-180, 180)
            el = rng.uniform(-89, 89)
            az2, el2 = cartesian_to_spherical(spherical_to_cartesian(az, el))
            daz = (az2 - az + 180) % 360 - 180
            assert abs(daz) < 1e-4
            assert abs(el2 - el) < 1e-4

    def test_azimuth_wrap_range(self):
        az, _ = cartesian_to_spherical(np.array([-1.0, 0.0, 0.0]))
        assert -180 <= az < 180


class TestRotations:
    def test_sixteen_distinct_signed_permutations(self):
        assert N_FOA_ROTATIONS == 16
        seen = set()
        for _name, mat in FOA_ROTATIONS:
            assert np.all(np.isin(mat, [-1.0, 0.0, 1.0]))
            np.testing.assert_allclose(mat @ mat.T, np.eye(3), atol=1e-12)
            seen.add(tuple(mat.astype(int).ravel()))
        assert len(seen) == 16

    def test_identity_is_id_zero(self):
        np.testing.assert_allclose(rotation_matrix(0), np.eye(3))

    def test_yaw_90_maps_forward_to_left(self):
        v = spherical_to_cartesian(0.0, 0.0)
        rotated = rotate_direction(1, v)
        az, el = cartesian_to_spherical(rotated)
        assert az == pytest.approx(90.0)
        assert el == pytest.approx(0.0)

    def test_bad_rotation_id(self):
        with pytest.raises(InvalidDirectionError):
            rotation_matrix(16)
