__version__ = '0.1.0'

from .errors import (
    MflabError,
)
from .field import (
    ChannelGauge,
    Domain,
    DomainKind,
    SpectralField,
    VorticityField,
    read_field,
    write_field,
)
from .functions import (
    ConvexFunction,
    Entropy,
    Exp,
    NegEntropyBoltzmann,
    PowerP,
    Quadratic,
    Tabulated,
    convex_function,
)
from .greens import (
    StreamSolution,
    energy,
    momentum,
    solve_stream,
)
from .rearrange import (
    ClosureMembership,
    RearrangementProfile,
    casimir,
    in_orbit_closure,
    profile,
)
from .bistoch import (
    BirkhoffDecomposition,
    BistochasticMatrix,
    birkhoff,
    fejer,
)
from .minimize import (
    KKTReport,
    MinimalFlowResult,
    MinimizeOptions,
    minimize_casimir,
    monotone_fit,
)
from .exclude import (
    ExclusionCertificate,
    PeakedDatum,
    build_peaked,
    certify_no_shear,
    max_shear_energy_bound,
    peaked_energy_spectral,
)
from .stathydro import (
    MeanFieldModel,
    MeanFieldSolution,
    MrsDistribution,
    liouville_solve,
    mrs_coarse_grain,
    selective_decay,
    sinh_poisson_solve,
)
from .simulate import (
    SimConfig,
    Trajectory,
    omega_limit_probe,
    run,
    step,
)
