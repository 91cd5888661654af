"""Long-horizon LiDAR instance correspondence and BEV contrastive
pretraining at desk scale.

Multi-sweep point clouds with ego poses go in; ground-free per-frame
instances, long temporal tracks, and a contrastive pretraining loop over
BEV features come out.  Everything is deterministic given a root seed.
"""

__version__ = "0.1.0"
