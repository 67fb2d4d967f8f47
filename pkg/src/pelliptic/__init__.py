"""Numerical p-ellipticity, Bellman-function certificates and discrete semigroups."""

from .ellipticity import (
    delta_p,
    ellipticity_report,
    lambda_of,
    Lambda_of,
    p_range,
    rotation_angle,
    sector_angle,
)

__version__ = "0.1.0"
