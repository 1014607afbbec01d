import numpy as np
import pytest

from conftest import perturbed_varifold, random_varifold
from varimatch.geometry import (
    DiscreteVarifold,
    RigidTransform,
    apply_rigid,
    face_elements,
    synth_sphere,
    truncate_by_cylinder,
)
from varimatch.varifold import (
    DegenerateTargetError,
    VarifoldKernelConfig,
    distance_sq,
    icp_dissimilarity,
    inner_product,
    nearest_center_matches,
    orientation_kernel,
    partial_dissimilarity,
    ratio_floor_count,
    regularizer_global,
    regularizer_local,
    representer_values,
    smooth_min_one,
    spatial_kernel,
)


def spatial_oracle(x, y, sigma):
    return float(np.exp(-((np.asarray(x) - np.asarray(y)) ** 2).sum() / sigma**2))


def orientation_oracle(u, v):
    return float(np.exp(np.dot(u, v)))


def representer_oracle(at, of, sigma):
    out = np.zeros(at.n)
    for i in range(at.n):
        acc = 0.0
        for j in range(of.n):
            acc += (
                spatial_oracle(at.centers[i], of.centers[j], sigma)
                * orientation_oracle(at.directors[i], of.directors[j])
                * of.weights[j]
            )
        out[i] = at.weights[i] * acc
    return out


def inner_oracle(a, b, sigma):
    acc = 0.0
    for i in range(a.n):
        for j in range(b.n):
            acc += (
                spatial_oracle(a.centers[i], b.centers[j], sigma)
                * orientation_oracle(a.directors[i], b.directors[j])
                * a.weights[i]
                * b.weights[j]
            )
    return acc


def min_eps_oracle(s, eps):
    return 0.5 * (s + 1.0 - np.sqrt(eps + (s - 1.0) ** 2))


def partial_oracle(s, t, sigma, eps, weighted):
    a = representer_oracle(s, s, sigma)
    b = representer_oracle(t, t, sigma)
    total = 0.0
    for i in range(s.n):
        covered = 0.0
        for l in range(t.n):
            kernel = spatial_oracle(s.centers[i], t.centers[l], sigma)
            kernel *= orientation_oracle(s.directors[i], t.directors[l])
            if weighted:
                kernel *= t.weights[l]
            covered += min_eps_oracle(a[i] / b[l], eps) * kernel
        margin = a[i] - covered
        charge = max(margin, 0.0) ** 2
        total += s.weights[i] * charge if weighted else charge
    return total


def reg_global_oracle(s, s_def, sigma):
    return (representer_oracle(s, s, sigma).sum()
            - representer_oracle(s_def, s_def, sigma).sum()) ** 2


def reg_local_oracle(s, s_def, sigma):
    a = representer_oracle(s, s, sigma)
    a_def = representer_oracle(s_def, s_def, sigma)
    drift = a - a_def * (s_def.weights / s.weights)
    return float((drift * drift).sum())


class TestKernelPins:
    def test_spatial_kernel(self):
        assert spatial_kernel([0, 0, 0], [0, 0, 0], 2.0) == 1.0
        assert spatial_kernel([1, 0, 0], [0, 0, 0], 1.0) == pytest.approx(np.exp(-1.0))

    def test_orientation_extremes(self):
        u = np.array([1.0, 0.0, 0.0])
        assert orientation_kernel(u, u) == pytest.approx(np.e, abs=1e-15)
        assert orientation_kernel(u, -u) == pytest.approx(1 / np.e, abs=1e-15)
        assert orientation_kernel(u, [0.0, 1.0, 0.0]) == pytest.approx(1.0, abs=1e-15)

    def test_smooth_min_one(self):
        assert smooth_min_one(0.0, 0.0) == 0.0
        assert smooth_min_one(1.0, 1e-6) == pytest.approx(1.0 - 5e-4, abs=1e-12)
        assert smooth_min_one(3.0, 1e-6) == pytest.approx(0.9999998750000078, abs=1e-14)
        for s in np.linspace(-2, 4, 41):
            assert smooth_min_one(s, 1e-6) <= min(1.0, s) + 1e-12


class TestOracleEquivalence:
    def test_representer_inner_distance(self, rng):
        for _ in range(5):
            a = random_varifold(rng, int(rng.integers(2, 30)))
            b = random_varifold(rng, int(rng.integers(2, 30)))
            sigma = float(rng.uniform(0.5, 3.0))
            got = representer_values(a, b, sigma)
            want = representer_oracle(a, b, sigma)
            assert np.abs(got - want).max() <= 1e-10 * np.abs(want).max()
            got_ip = inner_product(a, b, sigma)
            want_ip = inner_oracle(a, b, sigma)
            assert abs(got_ip - want_ip) <= 1e-10 * abs(want_ip)
            want_d = (
                inner_oracle(a, a, sigma)
                - 2 * inner_oracle(a, b, sigma)
                + inner_oracle(b, b, sigma)
            )
            assert distance_sq(a, b, sigma) == pytest.approx(want_d, rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("weighted", [False, True])
    def test_partial_dissimilarity(self, rng, weighted):
        cfgs = [VarifoldKernelConfig(s, e) for s in (0.8, 1.5) for e in (1e-6, 1e-3)]
        for cfg in cfgs:
            s = random_varifold(rng, int(rng.integers(2, 25)))
            t = random_varifold(rng, int(rng.integers(2, 25)))
            got = partial_dissimilarity(s, t, cfg, weighted_quadrature=weighted)
            want = partial_oracle(s, t, cfg.sigma_w, cfg.epsilon, weighted)
            assert got == pytest.approx(want, rel=1e-10)

    def test_regularizers(self, rng):
        for _ in range(5):
            s = random_varifold(rng, 12)
            s_def = perturbed_varifold(
                s, centers=s.centers + rng.normal(size=s.centers.shape) * 0.1,
                weights=s.weights * rng.uniform(0.8, 1.2, size=s.n),
            )
            sigma = 1.2
            assert regularizer_global(s, s_def, sigma) == pytest.approx(
                reg_global_oracle(s, s_def, sigma), rel=1e-10
            )
            assert regularizer_local(s, s_def, sigma) == pytest.approx(
                reg_local_oracle(s, s_def, sigma), rel=1e-10
            )


class TestClosedForms:
    def test_single_element_self_dissimilarity(self):
        one = DiscreteVarifold([[0.0, 0, 0]], [[1.0, 0, 0]], [1.0])
        value = partial_dissimilarity(one, one, VarifoldKernelConfig(1.0, 1e-6))
        assert abs(value - np.e**2 * 1e-6 / 4) < 1e-12

    def test_distance_to_self_is_zero(self, rng):
        s = random_varifold(rng, 17)
        assert distance_sq(s, s, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_single_element_local_regularizer(self):
        one = DiscreteVarifold([[0.0, 0, 0]], [[1.0, 0, 0]], [1.0])
        for c in (0.5, 0.9, 1.3):
            shrunk = perturbed_varifold(one, weights=np.array([c]))
            want = np.e**2 * (1 - c**3) ** 2
            assert regularizer_local(one, shrunk, 1.0) == pytest.approx(want, rel=1e-12)

    def test_regularizers_vanish_without_deformation(self, rng):
        s = random_varifold(rng, 9)
        assert regularizer_global(s, s, 1.0) == 0.0
        assert regularizer_local(s, s, 1.0) == 0.0

    def test_regularizers_invariant_under_rigid_motion(self, rng):
        s = random_varifold(rng, 9)
        t = RigidTransform((12.0, -30.0, 71.0), (0.4, -2.0, 1.0))
        moved = apply_rigid(t, s)
        assert regularizer_global(s, moved, 1.0) == pytest.approx(0.0, abs=1e-18)
        assert regularizer_local(s, moved, 1.0) == pytest.approx(0.0, abs=1e-18)


class TestDegenerateTarget:
    def test_zero_target_representer_rejected(self):
        s = DiscreteVarifold([[0.0, 0, 0]], [[1.0, 0, 0]], [1.0])
        t = perturbed_varifold(s, weights=np.array([0.0]))
        with pytest.raises((DegenerateTargetError, ValueError)):
            partial_dissimilarity(s, t, VarifoldKernelConfig(1.0, 1e-6))

    def test_tiny_target_floored_and_counted(self):
        before = ratio_floor_count()
        s = DiscreteVarifold([[0.0, 0, 0]], [[1.0, 0, 0]], [1.0])
        # isolated element with a minuscule weight: representer positive
        # but below the floor
        t = DiscreteVarifold(
            [[0.0, 0, 0], [8.0, 0, 0]], [[1.0, 0, 0], [1.0, 0, 0]], [1.0, 1e-16]
        )
        partial_dissimilarity(s, t, VarifoldKernelConfig(1.0, 1e-6))
        assert ratio_floor_count() > before


class TestRigidInvariance:
    def test_twenty_random_motions(self, rng):
        s = random_varifold(rng, 14)
        t = random_varifold(rng, 19)
        cfg = VarifoldKernelConfig(1.3, 1e-6)
        base_delta = partial_dissimilarity(s, t, cfg)
        base_omega = representer_values(s, t, cfg.sigma_w)
        base_dist = distance_sq(s, t, cfg.sigma_w)
        for _ in range(20):
            motion = RigidTransform(
                rng.uniform(-180, 180, size=3), rng.normal(size=3) * 3.0
            )
            ms, mt = apply_rigid(motion, s), apply_rigid(motion, t)
            assert partial_dissimilarity(ms, mt, cfg) == pytest.approx(
                base_delta, rel=1e-10
            )
            got_omega = representer_values(ms, mt, cfg.sigma_w)
            assert np.abs(got_omega - base_omega).max() <= 1e-10 * np.abs(
                base_omega
            ).max()
            assert distance_sq(ms, mt, cfg.sigma_w) == pytest.approx(
                base_dist, rel=1e-10, abs=1e-12
            )


class TestInclusionProperty:
    def test_subset_asymmetry_and_far_field(self):
        # unit sphere: face masses are far below their full-shape
        # counterparts, so every hinge margin clips to zero
        target = synth_sphere(1.0, 2)
        source = truncate_by_cylinder(
            target, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.6
        )
        s = face_elements(source)
        t = face_elements(target)
        cfg = VarifoldKernelConfig(0.2, 1e-6)
        near = partial_dissimilarity(s, t, cfg)
        far_t = apply_rigid(
            RigidTransform.pure_translation((50.0, 0.0, 0.0)), t
        )
        far = partial_dissimilarity(s, far_t, cfg)
        assert far > 0.0
        assert near <= 0.01 * far
        assert near < partial_dissimilarity(t, s, cfg)


class TestIcp:
    def test_subset_centers_give_zero(self, rng):
        t = random_varifold(rng, 25)
        idx = rng.choice(25, size=10, replace=False)
        s = perturbed_varifold(
            t, centers=t.centers[idx], directors=t.directors[idx],
            weights=t.weights[idx],
        )
        assert icp_dissimilarity(s, t) == 0.0

    def test_uniform_translation_distance(self, rng):
        s = random_varifold(rng, 12, scale=0.01)
        moved = apply_rigid(RigidTransform.pure_translation((0.0, 0.0, 50.0)), s)
        # far shift dwarfs the cloud spread, every NN distance is ~50
        assert icp_dissimilarity(moved, s) == pytest.approx(50.0, abs=0.05)

    def test_matches_brute_force(self, rng):
        pts = rng.normal(size=(40, 3))
        tgt = rng.normal(size=(23, 3))
        idx, dist = nearest_center_matches(pts, tgt)
        d2 = ((pts[:, None, :] - tgt[None, :, :]) ** 2).sum(-1)
        assert np.array_equal(idx, d2.argmin(axis=1))
        assert np.allclose(dist, np.sqrt(d2.min(axis=1)))

    def test_tie_breaks_to_lowest_index(self):
        pts = np.array([[0.0, 0.0, 0.0]])
        tgt = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        idx, _ = nearest_center_matches(pts, tgt)
        assert idx[0] == 0
