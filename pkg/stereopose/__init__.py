"""StereoPose - 3D human pose labels from 2D keypoints

The lifting networks synthesize the view of a virtual right camera from the
2D keypoints of the left view, reconstruct a root-relative 3D pose from the
stereo pair and a geometric search places the pose at the depth that best
explains the observed keypoints.
"""

__version__ = "0.1.0"
