import numpy as np
import pytest

from splateval.articulate import (
    assign_splats_to_links,
    load_bundle,
    pose_articulated_splat,
    pose_link_meshes,
    save_bundle,
)
from splateval.geometry import axis_angle_quat, quat_to_mat
from splateval.meshing import box_mesh, sample_surface
from splateval.robot import JointConfig, forward_kinematics, parse_robot_model
from splateval.splats import SplatScene, ValidationError

# the two boxes leave a 4 cm gap at the joint so assignment is unambiguous
TWO_BOX_ARM = """
<robot name="boxes">
  <link name="base">
    <collision><origin xyz="0.13 0 0"/><geometry><box size="0.26 0.08 0.08"/></geometry></collision>
  </link>
  <link name="arm">
    <collision><origin xyz="0.17 0 0"/><geometry><box size="0.26 0.08 0.08"/></geometry></collision>
  </link>
  <joint name="swing" type="revolute">
    <parent link="base"/><child link="arm"/>
    <origin xyz="0.3 0 0"/><axis xyz="0 0 1"/><limit lower="-3.14" upper="3.14"/>
  </joint>
</robot>
"""


def covariance(quat, scales):
    r = quat_to_mat(quat)
    s = np.diag([scales[0] ** 2, scales[1] ** 2, 0.0])
    return r @ s @ r.T


def surface_splats(model, q, rng, per_link=40, noise=0.0):
    """Splats sampled from the posed link boxes, with ground-truth labels."""
    fk = forward_kinematics(model, q)
    means, labels = [], []
    for name, link in model.links.items():
        prim = link.collisions[0]
        mesh = box_mesh(np.array(prim.params) / 2.0)
        pts = sample_surface(mesh, per_link, rng)
        pts = prim.origin.apply(pts)
        pts = fk[name].apply(pts)
        if noise:
            pts = pts + rng.normal(0, noise, pts.shape)
        means.append(pts)
        labels += [name] * per_link
    means = np.concatenate(means)
    n = len(means)
    return (
        SplatScene(means, np.tile([1.0, 0, 0, 0], (n, 1)), np.full((n, 2), 0.01),
                   np.full((n, 3), 0.5), np.full(n, 0.9), "world"),
        labels,
    )


class TestAssignment:
    def test_all_on_one_link(self, rng):
        model = parse_robot_model(TWO_BOX_ARM)
        q = JointConfig([0.7])
        fk = forward_kinematics(model, q)
        pts = fk["base"].apply(
            np.array([[0.05, 0.0, 0.0], [0.2, 0.02, 0.0], [0.28, 0.0, 0.03]])
        )
        scene = SplatScene(pts, np.tile([1.0, 0, 0, 0], (3, 1)), np.full((3, 2), 0.01),
                           np.full((3, 3), 0.5), np.full(3, 0.9))
        art = assign_splats_to_links(scene, model, q)
        assert art.report.counts["base"] == 3
        assert art.report.counts["arm"] == 0

    def test_far_splat_dropped(self):
        model = parse_robot_model(TWO_BOX_ARM)
        pts = np.array([[0.1, 0.0, 0.0], [0.0, 0.0, 1.0]])  # second is 1 m away
        scene = SplatScene(pts, np.tile([1.0, 0, 0, 0], (2, 1)), np.full((2, 2), 0.01),
                           np.full((2, 3), 0.5), np.full(2, 0.9))
        art = assign_splats_to_links(scene, model, JointConfig([0.0]), cutoff=0.05)
        assert art.report.dropped == 1
        assert sum(art.report.counts.values()) == 1

    def test_synthetic_labels_recovered(self, rng):
        model = parse_robot_model(TWO_BOX_ARM)
        q = JointConfig([1.2])  # good clearance between the boxes
        scene, labels = surface_splats(model, q, rng, per_link=60, noise=0.002)
        art = assign_splats_to_links(scene, model, q, cutoff=0.05)
        fk = forward_kinematics(model, q)
        correct = 0
        for name in model.links:
            sub = art.link_splats[name]
            world = fk[name].apply(sub.means)
            for w in world:
                i = int(np.argmin(np.linalg.norm(scene.means - w, axis=1)))
                correct += labels[i] == name
        assert art.report.dropped == 0
        assert correct == len(scene)

    def test_empty_scene_rejected(self):
        model = parse_robot_model(TWO_BOX_ARM)
        with pytest.raises(ValidationError):
            assign_splats_to_links(SplatScene.empty(), model, JointConfig([0.0]))


class TestPosing:
    def setup_method(self):
        self.model = parse_robot_model(TWO_BOX_ARM)
        self.q_scan = JointConfig([0.4])
        self.rng = np.random.default_rng(11)
        self.scene, _ = surface_splats(self.model, self.q_scan, self.rng, per_link=30)
        self.art = assign_splats_to_links(self.scene, self.model, self.q_scan)

    def test_scan_pose_reproduces_original(self):
        posed = pose_articulated_splat(self.art, self.q_scan)
        orig = np.concatenate([self.scene.means])
        got = posed.means
        # same set of centers: match nearest
        for g in got:
            assert np.min(np.linalg.norm(orig - g, axis=1)) < 1e-9
        assert len(posed) == len(self.scene)

    def test_covariance_eigenvalues_invariant(self):
        posed = pose_articulated_splat(self.art, JointConfig([-1.0]))
        for i in range(0, len(posed), 7):
            ev = np.sort(np.linalg.eigvalsh(covariance(posed.quats[i], posed.scales[i])))
            ev0 = np.sort(np.linalg.eigvalsh(covariance([1, 0, 0, 0], posed.scales[i])))
            assert np.allclose(ev, ev0, atol=1e-12)

    def test_hand_computed_rotation(self):
        q_scan = JointConfig([0.0])
        splat_local_world = np.array([0.4, 0.05, 0.0])  # on the arm link at scan pose
        scene = SplatScene(
            splat_local_world[None], np.array([[1.0, 0, 0, 0]]), np.array([[0.02, 0.01]]),
            np.array([[0.5, 0.5, 0.5]]), np.array([0.9]),
        )
        art = assign_splats_to_links(scene, self.model, q_scan)
        assert art.report.counts["arm"] == 1
        q_new = JointConfig([np.pi / 2])
        posed = pose_articulated_splat(art, q_new)
        # by hand: joint at (0.3,0,0); rotate local offset (0.1, 0.05) by 90 deg
        rot = quat_to_mat(axis_angle_quat([0, 0, 1], np.pi / 2))
        expected = np.array([0.3, 0, 0]) + rot @ (splat_local_world - np.array([0.3, 0, 0]))
        assert np.allclose(posed.means[0], expected, atol=1e-9)
        ev_before = np.linalg.eigvalsh(covariance(scene.quats[0], scene.scales[0]))
        ev_after = np.linalg.eigvalsh(covariance(posed.quats[0], posed.scales[0]))
        assert np.allclose(np.sort(ev_before), np.sort(ev_after), atol=1e-15)

    def test_fixed_only_robot_independent_of_q(self):
        xml = """
        <robot><link name="a">
        <collision><geometry><sphere radius="0.1"/></geometry></collision></link>
        <link name="b"/>
        <joint name="f" type="fixed"><parent link="a"/><child link="b"/><origin xyz="0.2 0 0"/></joint>
        </robot>"""
        model = parse_robot_model(xml)
        pts = np.array([[0.05, 0.0, 0.0]])
        scene = SplatScene(pts, [[1.0, 0, 0, 0]], [[0.01, 0.01]], [[0.5, 0.5, 0.5]], [0.9])
        art = assign_splats_to_links(scene, model, JointConfig(np.zeros(0)))
        a = pose_articulated_splat(art, JointConfig(np.zeros(0)))
        assert np.allclose(a.means, pts, atol=1e-12)

    def test_continuity_bound(self):
        q = JointConfig([0.3])
        delta = 1e-4
        a = pose_articulated_splat(self.art, q)
        b = pose_articulated_splat(self.art, JointConfig([0.3 + delta]))
        disp = np.linalg.norm(a.means - b.means, axis=1).max()
        lever = 0.7  # max distance from joint axis to any splat
        assert disp <= lever * delta

    def test_mesh_splat_consistency(self):
        meshes = {}
        for name, link in self.model.links.items():
            prim = link.collisions[0]
            m = box_mesh(np.array(prim.params) / 2.0)
            m.vertices = prim.origin.apply(m.vertices)
            meshes[name] = m
        art = assign_splats_to_links(self.scene, self.model, self.q_scan, link_meshes=meshes)
        for q in (JointConfig([0.0]), JointConfig([1.0])):
            posed_meshes = pose_link_meshes(art, q)
            fk = forward_kinematics(art.model, q)
            for name in art.links_with_splats():
                centers = fk[name].apply(art.link_splats[name].means)
                verts = posed_meshes[name].vertices
                d = np.linalg.norm(centers[:, None, :] - verts[None, :, :], axis=-1).min(axis=1)
                assert d.max() <= 0.05 + 0.21  # within cutoff of the box (diag slack)


class TestBundle:
    def test_round_trip(self, tmp_path, rng):
        model = parse_robot_model(TWO_BOX_ARM)
        q_scan = JointConfig([0.2])
        scene, _ = surface_splats(model, q_scan, rng, per_link=10)
        meshes = {"base": box_mesh((0.15, 0.04, 0.04), center=(0.15, 0, 0))}
        art = assign_splats_to_links(scene, model, q_scan, link_meshes=meshes)
        save_bundle(art, tmp_path / "bundle", TWO_BOX_ARM)
        back = load_bundle(tmp_path / "bundle")
        assert back.model.dof == 1
        assert np.allclose(back.q_scan.q, [0.2])
        assert set(back.links_with_splats()) == set(art.links_with_splats())
        posed_a = pose_articulated_splat(art, JointConfig([0.9]))
        posed_b = pose_articulated_splat(back, JointConfig([0.9]))
        assert np.allclose(np.sort(posed_a.means, axis=0), np.sort(posed_b.means, axis=0), atol=1e-6)
