"""Convert real images into ``CCRFS 1`` feature-set files.

SIFT keypoints with 128-dim descriptors, SLIC superpixels, and a color
histogram global descriptor, written in the text format consumed by the
``ccr`` change-retrieval engine.
"""

__version__ = "0.1.0"
