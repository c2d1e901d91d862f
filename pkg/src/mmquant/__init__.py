"""Scalar quantization tuned for matrix-multiplication error.

The package builds companding scalar quantizers whose point densities are
optimal for the mean-squared error of a matrix product (rather than of the
operands), benchmarks them against standard quantizers, and numerically
verifies the high-rate laws that govern them.
"""

__version__ = "0.1.0"

from .gauss_model import (
    BivariatePairSpec,
    DensityShape,
    LeadingConstants,
    general_weighted_density,
    leading_constants,
    normalizer_J,
    optimal_density_shape,
    weight_fn,
)
from .compander import (
    Codebook,
    PointDensity,
    build_compander_codebook,
    equal_mass_edges,
    invert_cdf,
    tabulate_cdf,
)
from .quantizer_zoo import (
    CalibrationResult,
    QuantizerConfig,
    build_quantizer,
    calibrate_scale,
    lloyd_max,
    nearest_quantize,
)

__all__ = [
    "BivariatePairSpec",
    "CalibrationResult",
    "Codebook",
    "DensityShape",
    "LeadingConstants",
    "PointDensity",
    "QuantizerConfig",
    "build_compander_codebook",
    "build_quantizer",
    "calibrate_scale",
    "equal_mass_edges",
    "general_weighted_density",
    "invert_cdf",
    "leading_constants",
    "lloyd_max",
    "nearest_quantize",
    "normalizer_J",
    "optimal_density_shape",
    "tabulate_cdf",
    "weight_fn",
]
