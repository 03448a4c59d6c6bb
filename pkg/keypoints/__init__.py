"""
Keypoint detection, sampling and ground-truth pairing
"""

from .keypoint_set import KeypointSet
from .detector import Detections, detect_keypoints, find_extrema, scale_sigmas
from .sampling import KeypointSample, sample_keypoints, attach_ground_truth, draw_keypoints

__all__ = [
    'KeypointSet',
    'Detections',
    'detect_keypoints',
    'find_extrema',
    'scale_sigmas',
    'KeypointSample',
    'sample_keypoints',
    'attach_ground_truth',
    'draw_keypoints',
]
