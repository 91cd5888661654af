"""Instance identification: end-scan support filtering and centroid checks."""

import numpy as np
import pytest

from cohere.cluster import ClusterParams, identify_instances
from cohere.errors import EmptyInput
from cohere.geom import Pose, Sweep, compose_frame
from cohere.ground import GroundLabeling, segment_ground
from cohere.synth import BoxSpec, EgoSpec, SceneSpec, generate


def frame_from_sweeps(sweep_points):
    """Identity-pose frame whose s-th sweep holds sweep_points[s]."""
    sweeps = [
        Sweep(timestamp=0.05 * s, points=np.asarray(pts, dtype=np.float64),
              pose=Pose.identity())
        for s, pts in enumerate(sweep_points)
    ]
    return compose_frame(sweeps)


def all_candidates(frame):
    n = len(frame.merged_points)
    return GroundLabeling(ground=np.zeros(n, dtype=bool),
                          in_range=np.ones(n, dtype=bool))


def blob(rng, center, n, sigma=0.05):
    return rng.normal(0.0, sigma, size=(n, 3)) + np.asarray(center, dtype=float)


def three_box_scene(frames=2):
    return SceneSpec(
        seed=404,
        frames=frames,
        sweeps_per_frame=10,
        sweep_interval=0.05,
        ego=EgoSpec(start=(0.0, 0.0, 0.0), velocity=(1.0, 0.0, 0.0)),
        objects=(
            BoxSpec(size=(1.6, 1.2, 1.2), center=(8.0, 0.0, 1.0),
                    velocity=(0.5, 0.0, 0.0)),
            BoxSpec(size=(1.2, 1.8, 1.4), center=(-6.0, 5.0, 1.2),
                    velocity=(0.0, -0.4, 0.0), yaw=0.7),
            BoxSpec(size=(2.0, 1.0, 1.2), center=(4.0, -9.0, 1.0),
                    velocity=(0.0, 0.0, 0.0), yaw=-0.3),
        ),
        points_per_object=25,
        ground_points=600,
        noise_sigma=0.02,
    )


def test_synthetic_boxes_one_cluster_each_with_true_centers():
    scene = generate(three_box_scene())
    for f, frame in enumerate(scene.frames):
        labeling = segment_ground(frame)
        result = identify_instances(frame, labeling)
        assert result.n_clusters == len(scene.spec.objects)
        for m in range(len(scene.spec.objects)):
            gt_first = scene.gt.first_centers[f, m]
            gt_last = scene.gt.last_centers[f, m]
            d_first = [np.linalg.norm(c.center_first - gt_first)
                       for c in result.clusters]
            best = int(np.argmin(d_first))
            assert d_first[best] < 0.1
            assert np.linalg.norm(
                result.clusters[best].center_last - gt_last) < 0.1


def test_middle_sweep_only_cluster_discarded():
    rng = np.random.default_rng(3)
    a0, a1, a2 = (blob(rng, (0, 0, 1), 15) for _ in range(3))
    b = blob(rng, (20, 0, 1), 20)
    frame = frame_from_sweeps([a0, np.vstack([a1, b]), a2])
    result = identify_instances(frame, all_candidates(frame),
                                ClusterParams(min_end_scan_points=5))
    assert result.n_clusters == 1
    assert result.discarded == 1
    # every middle-only point ends up in the noise list
    b_indices = np.flatnonzero(
        np.isin(frame.merged_points[:, 0], b[:, 0]))
    assert np.isin(b_indices, result.noise).all()


def test_min_support_one_retains_thin_end_scans():
    rng = np.random.default_rng(4)
    core = blob(rng, (5, 5, 1), 18, sigma=0.03)
    first_pt = blob(rng, (5, 5, 1), 1, sigma=0.03)
    last_pt = blob(rng, (5, 5, 1), 1, sigma=0.03)
    anchor = [blob(rng, (0, 0, 1), 15) for _ in range(3)]
    sweeps = [np.vstack([anchor[0], first_pt]),
              np.vstack([anchor[1], core]),
              np.vstack([anchor[2], last_pt])]
    frame = frame_from_sweeps(sweeps)
    strict = identify_instances(frame, all_candidates(frame),
                                ClusterParams(min_end_scan_points=5))
    lax = identify_instances(frame, all_candidates(frame),
                             ClusterParams(min_end_scan_points=1))
    assert strict.n_clusters == 1 and strict.discarded == 1
    assert lax.n_clusters == 2 and lax.discarded == 0


def test_partition_of_candidates():
    rng = np.random.default_rng(9)
    sweeps = [np.vstack([blob(rng, (0, 0, 1), 20),
                         blob(rng, (6, 0, 1), 20),
                         rng.uniform(-30, 30, size=(10, 3))])
              for _ in range(3)]
    frame = frame_from_sweeps(sweeps)
    n = len(frame.merged_points)
    labeling = GroundLabeling(
        ground=rng.uniform(size=n) < 0.2,
        in_range=rng.uniform(size=n) < 0.9)
    result = identify_instances(frame, labeling)
    pieces = [c.indices for c in result.clusters] + [result.noise]
    covered = np.sort(np.concatenate(pieces))
    expected = np.flatnonzero(~labeling.ground & labeling.in_range)
    np.testing.assert_array_equal(covered, expected)
    for c in result.clusters:
        assert len(np.intersect1d(c.first_scan, c.last_scan)) == 0
        assert np.isin(c.first_scan, c.indices).all()
        assert np.isin(c.last_scan, c.indices).all()


def test_centers_inside_cluster_bounding_box():
    scene = generate(three_box_scene(frames=1))
    frame = scene.frames[0]
    result = identify_instances(frame, segment_ground(frame))
    assert result.n_clusters > 0
    for c in result.clusters:
        pts = frame.merged_points[c.indices]
        for center in (c.center_first, c.center_last):
            assert (center >= pts.min(axis=0) - 1e-12).all()
            assert (center <= pts.max(axis=0) + 1e-12).all()
        np.testing.assert_allclose(
            c.center_first, frame.merged_points[c.first_scan].mean(axis=0),
            atol=1e-9)
        np.testing.assert_allclose(
            c.center_last, frame.merged_points[c.last_scan].mean(axis=0),
            atol=1e-9)


def test_no_candidates_is_empty_result():
    rng = np.random.default_rng(1)
    frame = frame_from_sweeps([blob(rng, (0, 0, 0), 8) for _ in range(2)])
    n = len(frame.merged_points)
    labeling = GroundLabeling(ground=np.ones(n, dtype=bool),
                              in_range=np.ones(n, dtype=bool))
    result = identify_instances(frame, labeling)
    assert result.n_clusters == 0
    assert len(result.noise) == 0
    assert result.discarded == 0


def test_mismatched_labeling_rejected():
    rng = np.random.default_rng(2)
    frame = frame_from_sweeps([blob(rng, (0, 0, 0), 8) for _ in range(2)])
    labeling = GroundLabeling(ground=np.zeros(3, dtype=bool),
                              in_range=np.ones(3, dtype=bool))
    with pytest.raises(EmptyInput):
        identify_instances(frame, labeling)


def test_deterministic_rerun():
    scene = generate(three_box_scene(frames=1))
    frame = scene.frames[0]
    labeling = segment_ground(frame)
    a = identify_instances(frame, labeling)
    b = identify_instances(frame, labeling)
    assert a.n_clusters == b.n_clusters
    for ca, cb in zip(a.clusters, b.clusters):
        np.testing.assert_array_equal(ca.indices, cb.indices)
        np.testing.assert_array_equal(ca.center_first, cb.center_first)
    np.testing.assert_array_equal(a.noise, b.noise)
