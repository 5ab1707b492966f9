"""Needle Paul trap toolkit: Mathieu/Floquet stability, trap and libration
frequencies, Langevin dynamics, spectra and charge fitting."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ELEMENTARY_CHARGE,
    Environment,
    EtaTable,
    OutOfTableRange,
    Particle,
    TrapConfig,
    force,
    potential,
)
from .floquet import (  # noqa: F401
    MathieuParams,
    beta_series,
    characteristic_exponent,
    floquet_coefficients,
    mathieu_params,
    pseudopotential_frequency,
    secular_frequency,
    stability_boundary_scan,
)
