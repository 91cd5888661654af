"""Regenerate the committed test fixtures under tests/fixtures/.

Run after any change that legitimately moves the tracking pipeline's
output, then review the diff before committing.  The golden tracks come
from the in-memory pipeline (no file round trip); the corrupted set is a
hand-built pair of tracks that swap objects halfway, whose metrics are
known in closed form.
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT / "src"))

import numpy as np

from cohere.assoc import Track, TrackEntry, TrackSet, Tracker
from cohere.cluster import identify_instances
from cohere.config import load_pipeline_config
from cohere.ground import segment_ground
from cohere.io import write_ground_truth
from cohere.synth import GroundTruth, generate, score_tracks

FIXTURES = ROOT / "tests" / "fixtures"


def golden_tracks():
    cfg = load_pipeline_config(FIXTURES / "golden_scene_config.json")
    scene = generate(cfg.scene)
    tracker = Tracker(match_radius=cfg.match_radius,
                      history_length=cfg.history_length)
    for frame in scene.frames:
        result = identify_instances(frame,
                                    segment_ground(frame, cfg.ground),
                                    cfg.cluster)
        tracker.step(frame.index, result, frame.frame_pose)
    tracks = tracker.result()
    metrics = score_tracks(tracks, scene.gt)
    assert metrics["purity"] == 1.0 and metrics["id_switches"] == 0, metrics
    (FIXTURES / "golden_tracks.jsonl").write_text(tracks.to_jsonl(),
                                                  encoding="utf-8")
    print(f"golden_tracks.jsonl: {tracks.n_tracks} tracks, "
          f"recall {metrics['recall']:.3f}")


def corrupted_tracks():
    n_frames = 10
    a, b = np.array([0.0, 0.0, 1.0]), np.array([10.0, 0.0, 1.0])
    centers = np.stack([np.tile(a, (n_frames, 1)),
                        np.tile(b, (n_frames, 1))], axis=1)
    gt = GroundTruth(n_frames=n_frames, n_objects=2,
                     first_centers=centers, last_centers=centers.copy())

    def entry(frame, pos):
        return TrackEntry(frame=frame, cluster=0,
                          center=np.asarray(pos, dtype=np.float64))

    # Both tracks swap objects at frame 5: each covers one object for five
    # frames, so every majority vote ties and breaks to object 0 -- half
    # the entries are wrong, object 1 goes uncovered, and object 0 changes
    # owner exactly once.
    swap = TrackSet(tracks=(
        Track(track_id=0, birth_frame=0, alive=False,
              entries=[entry(f, a if f < 5 else b) for f in range(n_frames)]),
        Track(track_id=1, birth_frame=0, alive=False,
              entries=[entry(f, b if f < 5 else a) for f in range(n_frames)]),
    ))
    expected = {"purity": 0.5, "recall": 0.5, "id_switches": 1,
                "center_rmse": 0.0, "n_tracks": 2, "n_entries": 20}
    assert score_tracks(swap, gt) == expected

    (FIXTURES / "corrupted_tracks.jsonl").write_text(swap.to_jsonl(),
                                                     encoding="utf-8")
    write_ground_truth(FIXTURES / "corrupted_gt.json", gt)
    (FIXTURES / "corrupted_metrics.json").write_text(
        json.dumps(expected, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print("corrupted_tracks.jsonl + gt + metrics: closed-form values hold")


if __name__ == "__main__":
    golden_tracks()
    corrupted_tracks()
