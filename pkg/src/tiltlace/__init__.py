"""Tilted random interlacements: potential theory, tilted walks and disconnection estimators on Z^d."""

__version__ = "0.1.0"

from .lattice import SiteSet, ShapeSpec, BoxSpec, blow_up, box, boundaries  # noqa: E402
from .potential import capacity, equilibrium_and_capacity, green  # noqa: E402
from .tilt import TiltParams, TiltProfile, build_profile, entropy  # noqa: E402
from .walk import RngStream, StopRule, sample_walk  # noqa: E402
from .interlace import sample_interlacement, sample_tilted_interlacement  # noqa: E402

__all__ = ["SiteSet", "ShapeSpec", "BoxSpec", "blow_up", "box", "boundaries", "capacity", "equilibrium_and_capacity",
           "green", "TiltParams", "TiltProfile", "build_profile", "entropy", "RngStream", "StopRule", "sample_walk",
           "sample_interlacement", "sample_tilted_interlacement"]
