"""Change retrieval engine.

Detects changed objects in a query feature set by comparing it against
reference images compressed into a bag-of-words inverted index: candidate
retrieval by global descriptor, per-feature anomaly scoring via asymmetric
distances to word exemplars, local-geometry filtering over a Delaunay graph
of superpixel centers, and visibility bounding boxes.
"""

__version__ = "0.1.0"
