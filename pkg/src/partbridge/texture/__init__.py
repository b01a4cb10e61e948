"""Texture transfer support: contour tracing and TPS image warping."""

from .contour import Contour, sample_contour_points, trace_contours
from .tps import TpsWarp, tps_fit, tps_warp_image

__all__ = ["Contour", "sample_contour_points", "trace_contours",
           "TpsWarp", "tps_fit", "tps_warp_image"]
