"""Battery digital-twin toolkit.

Single particle model solver, parameterized physics-informed surrogate,
differential-evolution parameter identification, synthetic aging campaigns,
and state-of-health estimation.
"""

from battwin.params import ParameterSet, nominal_parameters

__all__ = ["ParameterSet", "nominal_parameters"]
