"""Per-pixel vehicle velocity fields from registered aerial video.

Modules: raster (pixel kernels and file formats), classify (boosted pixel
classifier), detect (car detections), track (three-frame tracklets), field
(velocity histograms and mode maps), register (robust polyprojective
registration), sim (synthetic traffic) and cli.
"""
__version__ = "0.1.0"
