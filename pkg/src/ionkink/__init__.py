"""Kink solitons in two-dimensional trapped-ion Coulomb crystals.

Statics (Peierls-Nabarro potentials by constrained minimization), full
molecular dynamics with a Langevin thermostat, kink detection, a
collective-coordinate kink model and quench-ensemble statistics.
"""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("ionkink")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0+unknown"

from .errors import (
    CoincidentIons,
    ConfigError,
    ConstraintSingular,
    EmptyGroup,
    Instability,
    IonKinkError,
    IonLoss,
    NoConvergence,
    NoDistortion,
    NoKinkFormed,
    NoRoot,
    NotAKinkInterface,
    NumericalError,
    OutOfRange,
    TooFewExtrema,
)
from .model import (
    Configuration,
    IonSystem,
    UnitSystem,
    critical_nu_x,
    gradient,
    hessian,
    normal_modes,
    potential_energy,
)
from .kinkdetect import Kink, KinkReport, centre_extended, centre_odd, detect
from .statics import (
    PNCurve,
    constrained_minimize,
    minimize_energy,
    pn_barriers,
    seed_kink,
    trace_adiabatic,
)
from .dynamics import (
    DynamicsState,
    LangevinParams,
    RampSchedule,
    TrialRecord,
    run_quench,
    step_langevin,
    step_nve,
    thermalize,
)
from .collective import (
    KinkFrame,
    decompose,
    effective_mass,
    integrate_bare_kink,
    projection,
)
from .harness import (
    DensityEstimate,
    FieldScenario,
    Scenario,
    density_curve,
    efield_protocols,
    run_scenario,
    spatial_histogram,
)

__all__ = [name for name in dir() if not name.startswith("_")]
