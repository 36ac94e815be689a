"""Vectorized road mapping from monocular images via enhanced inverse
perspective mapping: flat-ground back-projection with first-order error
propagation, Catmull-Rom lane splines, and joint robust refinement of
markings, lanes, camera extrinsics, and vehicle poses."""

__version__ = "0.1.0"
FORMAT_VERSION = "1.0"
