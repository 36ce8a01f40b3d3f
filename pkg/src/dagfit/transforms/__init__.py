"""Standard node kinds."""

from .basic import Concat, Constant, Elementwise, Histogram, Identity, Product, Sum, WeightedSum
from .binning import (
    Integrator,
    IntegratorCollector,
    IntegratorSampler,
    Interpolator,
    Rebin,
    check_edges,
    gauss_legendre_grid,
    interpolate_linear,
)
from .jacobian import finite_diff_jacobian
from .matrix import Cholesky, MatrixProduct, SmearMatrixApply

__all__ = [
    "Cholesky",
    "Concat",
    "Constant",
    "Elementwise",
    "Histogram",
    "Identity",
    "Integrator",
    "IntegratorCollector",
    "IntegratorSampler",
    "Interpolator",
    "MatrixProduct",
    "Product",
    "Rebin",
    "SmearMatrixApply",
    "Sum",
    "WeightedSum",
    "check_edges",
    "finite_diff_jacobian",
    "gauss_legendre_grid",
    "interpolate_linear",
]
