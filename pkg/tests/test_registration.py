"""Registration drivers: config, rigid, ICP, shooting, pipeline."""

import numpy as np
import pytest

from conftest import random_varifold
from varimatch.deformation import DeformationKernel, FlowTrajectory, flow_points
from varimatch.evaluation import surface_metric, transport_points
from varimatch.geometry import (
    RigidTransform,
    apply_rigid,
    face_elements,
    synth_ellipsoid,
    synth_sphere,
    truncate_by_cylinder,
)
from varimatch.lbfgs import LbfgsOptions
from varimatch.registration import (
    PIPELINE_METHODS,
    RegistrationConfig,
    pipeline,
    register_icp_rigid,
    register_lddmm,
    register_rigid_partial,
    register_translation_partial,
)
from varimatch.varifold import VarifoldKernelConfig


def compose_maps(maps):
    rot = np.eye(3)
    t = np.zeros(3)
    for m in maps:
        r = m.matrix()
        rot = r @ rot
        t = r @ t + m.translation
    return rot, t


def rotation_gap_deg(ra, rb):
    c = 0.5 * (np.trace(ra @ rb.T) - 1.0)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def capped_sphere_pair(radius=10.0, subdivisions=2):
    target = synth_sphere(radius, subdivisions)
    source = truncate_by_cylinder(
        target, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.6 * radius
    )
    return source, target


class TestConfig:
    def test_round_trip(self):
        cfg = RegistrationConfig(
            sigma_w_schedule=(8.0, 4.0),
            sigma0=3.3,
            lambda1=5.0,
            regularizer="global",
            lbfgs=LbfgsOptions(max_iters=7),
        )
        assert RegistrationConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            RegistrationConfig(sigma_w_schedule=())
        with pytest.raises(ValueError):
            RegistrationConfig(sigma_w_schedule=(2.0, 4.0))
        with pytest.raises(ValueError):
            RegistrationConfig(lambda1=0.0)
        with pytest.raises(ValueError):
            RegistrationConfig(lambda2=-1.0)
        with pytest.raises(ValueError):
            RegistrationConfig(regularizer="ridge")
        with pytest.raises(ValueError):
            RegistrationConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            RegistrationConfig(epsilon=0.5)
        with pytest.raises(ValueError):
            RegistrationConfig(n_steps=0)
        with pytest.raises(ValueError):
            RegistrationConfig(max_angle_deg=0.0)
        with pytest.raises(ValueError):
            RegistrationConfig(sigma0=-1.0)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="sigma_v"):
            RegistrationConfig.from_dict({"sigma_v": 3.0})

    def test_resolve_sigma0(self, rng):
        mesh = synth_sphere(2.0, 1)
        cfg = RegistrationConfig()
        assert cfg.resolve_sigma0(mesh) == pytest.approx(
            0.5 * mesh.bounding_box_diagonal()
        )
        assert RegistrationConfig(sigma0=9.0).resolve_sigma0(mesh) == 9.0
        v = random_varifold(rng, 10)
        span = v.centers.max(axis=0) - v.centers.min(axis=0)
        assert cfg.resolve_sigma0(v) == pytest.approx(
            0.5 * float(np.linalg.norm(span))
        )

    def test_kernel_config(self):
        cfg = RegistrationConfig(epsilon=1e-4)
        assert cfg.kernel_config(3.0) == VarifoldKernelConfig(3.0, 1e-4)


class TestRigid:
    def test_recovers_known_motion(self):
        source = synth_ellipsoid((12.0, 9.0, 7.0), 2)
        true = RigidTransform((5.0, -8.0, 3.0), (4.0, -2.0, 7.0))
        target_mesh = apply_rigid(true, source)
        cfg = RegistrationConfig(
            sigma_w_schedule=(7.2,), lbfgs=LbfgsOptions(max_iters=100)
        )
        res = pipeline("rigid_pm", source, target_mesh, cfg)
        assert res.converged
        rot, t = compose_maps(res.maps)
        assert rotation_gap_deg(rot, true.matrix()) <= 0.5
        center = source.vertices.mean(axis=0)
        fitted = rot @ center + t
        assert np.linalg.norm(fitted - true.apply_points(center)) <= 0.5
        gap = np.abs(res.deformed_source.vertices - target_mesh.vertices)
        assert gap.max() <= 0.5

    def test_identity_on_self(self):
        mesh = synth_sphere(1.0, 2)
        elems = face_elements(mesh)
        cfg = RegistrationConfig(sigma_w_schedule=(0.3,))
        res = register_rigid_partial(elems, elems, cfg, source_mesh=mesh)
        assert np.all(res.final_state.euler_deg == 0.0)
        assert np.all(res.final_state.translation == 0.0)
        assert res.objective_trace[0]["total"] == 0.0
        assert np.array_equal(res.deformed_source.vertices, mesh.vertices)

    def test_far_target_has_flat_objective(self):
        mesh = synth_sphere(1.0, 2)
        elems = face_elements(mesh)
        far = apply_rigid(RigidTransform.pure_translation((1e6, 0, 0)), elems)
        cfg = RegistrationConfig(sigma_w_schedule=(0.3,))
        res = register_rigid_partial(elems, far, cfg)
        totals = [row["total"] for row in res.objective_trace]
        assert all(v == totals[0] for v in totals)
        assert np.abs(res.final_state.euler_deg).max() <= 1e-6
        assert np.abs(res.final_state.translation).max() <= 1e-6

    def test_translation_stage_reduces_objective(self):
        source, target = capped_sphere_pair()
        s = face_elements(source)
        t = face_elements(target)
        shifted = apply_rigid(RigidTransform.pure_translation((1.5, 0, 0)), s)
        cfg = RegistrationConfig(
            sigma_w_schedule=(4.0,), lbfgs=LbfgsOptions(max_iters=40)
        )
        res = register_translation_partial(shifted, t, cfg)
        assert res.objective_trace[-1]["total"] < res.objective_trace[0]["total"]
        assert res.final_state.euler_deg.max() == 0.0


class TestIcp:
    def test_identity_on_self(self):
        elems = face_elements(synth_ellipsoid((3.0, 2.0, 1.5), 1))
        res = register_icp_rigid(elems, elems)
        assert res.converged
        assert res.reason == "fixed_point"
        assert np.abs(res.final_state.euler_deg).max() <= 1e-10
        assert np.abs(res.final_state.translation).max() <= 1e-10

    def test_recovers_small_motion(self):
        mesh = synth_ellipsoid((12.0, 9.0, 7.0), 2)
        elems = face_elements(mesh)
        true = RigidTransform((4.0, 2.0, -3.0), (1.0, -2.0, 0.5))
        target = apply_rigid(true, elems)
        res = register_icp_rigid(elems, target, source_mesh=mesh)
        rot, t = compose_maps(res.maps)
        assert rotation_gap_deg(rot, true.matrix()) <= 1.0
        center = mesh.vertices.mean(axis=0)
        assert np.linalg.norm((rot @ center + t) - true.apply_points(center)) <= 1.0
        assert abs(np.linalg.det(rot) - 1.0) <= 1e-12

    def test_trace_non_increasing(self):
        mesh = synth_ellipsoid((12.0, 9.0, 7.0), 1)
        elems = face_elements(mesh)
        target = apply_rigid(RigidTransform((6.0, -4.0, 2.0), (2.0, 1.0, -1.0)), elems)
        res = register_icp_rigid(elems, target)
        totals = [row["total"] for row in res.objective_trace]
        assert all(b <= a for a, b in zip(totals, totals[1:]))


class TestLddmm:
    def small_pair(self):
        source, target = capped_sphere_pair(10.0, 2)
        return source, face_elements(target)

    def small_cfg(self, schedule=(4.0,), iters=6):
        return RegistrationConfig(
            sigma_w_schedule=schedule,
            lambda1=1000.0,
            lambda2=1.0,
            regularizer="local",
            lbfgs=LbfgsOptions(max_iters=iters),
        )

    def test_self_target_keeps_zero_momenta(self):
        mesh = synth_sphere(1.0, 2)
        cfg = RegistrationConfig(
            sigma_w_schedule=(0.3,), regularizer="none", lambda2=0.0,
            lbfgs=LbfgsOptions(max_iters=30),
        )
        res = register_lddmm(mesh, face_elements(mesh), cfg)
        assert res.converged
        assert np.all(res.final_state.momenta == 0.0)
        assert np.array_equal(res.deformed_source.vertices, mesh.vertices)
        assert res.objective_trace[0]["total"] == 0.0

    def test_objective_decomposition(self):
        source, target = self.small_pair()
        cfg = self.small_cfg()
        res = register_lddmm(source, target, cfg)
        assert len(res.objective_trace) >= 2
        for row in res.objective_trace:
            recomposed = (
                cfg.lambda1 * row["energy"] + row["data"]
                + cfg.lambda2 * row["regularizer"]
            )
            assert abs(row["total"] - recomposed) <= 1e-12 * max(1.0, abs(row["total"]))

    def test_deformed_source_matches_flow(self):
        source, target = self.small_pair()
        res = register_lddmm(source, target, self.small_cfg(iters=4))
        traj, kernel = res.maps[0]
        assert isinstance(traj, FlowTrajectory)
        assert isinstance(kernel, DeformationKernel)
        moved = flow_points(traj, source.vertices, kernel)
        assert np.array_equal(moved, res.deformed_source.vertices)

    def test_multiscale_equals_manual_handoff(self):
        source, target = self.small_pair()
        both = register_lddmm(source, target, self.small_cfg((4.0, 2.0), 3))
        first = register_lddmm(source, target, self.small_cfg((4.0,), 3))
        second = register_lddmm(
            source, target, self.small_cfg((2.0,), 3),
            initial_momenta=first.final_state.momenta, stage_offset=1,
        )
        assert np.array_equal(both.final_state.momenta, second.final_state.momenta)
        tail = [row for row in both.objective_trace if row["stage"] == 1]
        assert tail == second.objective_trace

    def test_momenta_shape_validated(self):
        source, target = self.small_pair()
        with pytest.raises(ValueError, match="momenta"):
            register_lddmm(
                source, target, self.small_cfg(),
                initial_momenta=np.zeros((3, 3)),
            )


class TestPipeline:
    def test_unknown_method_rejected(self):
        mesh = synth_sphere(1.0, 0)
        with pytest.raises(ValueError, match="unknown method"):
            pipeline("affine", mesh, mesh, RegistrationConfig())
        assert "rigid_pm+lddmm" in PIPELINE_METHODS

    def test_translation_pipeline_exact_on_shifted_copy(self):
        source = synth_sphere(1.0, 3)
        shift = (0.3, -0.2, 0.5)
        target = apply_rigid(RigidTransform.pure_translation(shift), source)
        cfg = RegistrationConfig(sigma_w_schedule=(0.4,))
        res = pipeline("translation", source, target, cfg)
        assert np.abs(res.deformed_source.vertices - target.vertices).max() <= 1e-12
        assert np.allclose(res.maps[0].translation, shift, atol=1e-12)

    def test_maps_transport_source_onto_deformed(self):
        source, target = capped_sphere_pair(10.0, 2)
        cfg = RegistrationConfig(
            sigma_w_schedule=(4.0,), lambda1=1000.0, lambda2=1.0,
            regularizer="local", lbfgs=LbfgsOptions(max_iters=3),
        )
        res = pipeline("rigid_pm+lddmm", source, target, cfg)
        kinds = [st["kind"] for st in res.stages]
        assert kinds == ["barycenter", "rigid_pm", "lddmm"]
        assert len(res.maps) == 3
        moved = transport_points(res.maps, source.vertices)
        assert np.array_equal(moved, res.deformed_source.vertices)

    def test_translation_equivariance(self):
        source = synth_ellipsoid((3.0, 2.5, 2.0), 1)
        true = RigidTransform((3.0, -2.0, 1.0), (0.2, 0.1, -0.1))
        target = apply_rigid(true, source)
        cfg = RegistrationConfig(
            sigma_w_schedule=(1.8,), lbfgs=LbfgsOptions(max_iters=40)
        )
        base = pipeline("rigid_pm", source, target, cfg)
        v = np.array([100.0, -50.0, 30.0])
        shift = RigidTransform.pure_translation(v)
        moved = pipeline(
            "rigid_pm", apply_rigid(shift, source), apply_rigid(shift, target), cfg
        )
        gap = np.abs(
            moved.deformed_source.vertices - v - base.deformed_source.vertices
        )
        assert gap.max() <= 1e-4 * 1.8

    def test_deformable_stage_beats_translation_only(self):
        # deflated partial source: the rigid family cannot close the
        # radial gap, the deformable stage can
        target = synth_sphere(10.0, 3)
        source = truncate_by_cylinder(
            synth_sphere(9.0, 3), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 6.0
        )
        cfg = RegistrationConfig(
            sigma_w_schedule=(4.0, 2.0), lambda1=1000.0, lambda2=1.0,
            regularizer="local", lbfgs=LbfgsOptions(max_iters=60),
        )
        t_elems = face_elements(target)
        rigid_only = pipeline("translation", source, target, cfg)
        full = pipeline("translation+lddmm", source, target, cfg)
        m_rigid = surface_metric(face_elements(rigid_only.deformed_source), t_elems)
        m_full = surface_metric(face_elements(full.deformed_source), t_elems)
        assert m_full <= m_rigid
