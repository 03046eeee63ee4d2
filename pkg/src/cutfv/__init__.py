"""Fourth-order cut-cell finite-volume elliptic solver with geometric multigrid."""

from .geometry import (
    CurvePiece,
    JordanCurve,
    Region,
    CellGeometry,
    GeometryError,
    DegeneracyError,
    NotAdjacentError,
    area,
    clip_to_box,
    closest_parameter,
    regularized_union,
    region_from_file,
    region_from_text,
)

__version__ = "0.1.0"
