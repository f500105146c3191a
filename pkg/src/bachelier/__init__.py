"""Pricing and term-structure engine for Bachelier's market model.

Submodules: :mod:`model` (market and payoff description), :mod:`simulate`
(path generation), :mod:`analytic` (closed forms), :mod:`pde`
(finite differences), :mod:`mc` (Feynman-Kac Monte Carlo), :mod:`curve`
(term structures) and :mod:`cli` (command line).
"""

from .analytic import (
    HullWhiteParams,
    PriceResult,
    bachelier_call,
    bachelier_price,
    bachelier_put,
    constant_hw,
    hw_bond_call,
    hw_bond_price,
    hw_moments,
)
from .errors import BachelierError, ConfigError, ConsistencyError, DomainError, NumericalError, SingularityError
from .mc import McEstimate
from .model import Constant, MarketModel, Payoff, PiecewiseConstant, Tabulated, constant_model
from .pde import GridSpec, price_bachelier_pde, price_dividend_pde
from .simulate import PathSet, SimConfig

__version__ = "0.1.0"

__all__ = [
    "BachelierError", "ConfigError", "ConsistencyError", "Constant", "DomainError", "GridSpec",
    "HullWhiteParams", "MarketModel", "McEstimate", "NumericalError", "PathSet", "Payoff",
    "PiecewiseConstant", "PriceResult", "SimConfig", "SingularityError", "Tabulated",
    "bachelier_call", "bachelier_price", "bachelier_put", "constant_hw", "constant_model",
    "hw_bond_call", "hw_bond_price", "hw_moments", "price_bachelier_pde", "price_dividend_pde",
]
