"""Space-time relaxation of L1-coercive optimal control problems.

Problems are stated on ``[0, T]`` with controls that may concentrate.  The
relaxed problem runs over a parameter ``s``: time becomes a state with
control ``v = dt/ds >= 0`` and concentrations become vertical pieces of the
space-time curve.  Modules:

``problem``      problem definition and sampled assumption constants
``relaxation``   perspective (1-homogeneous) evaluators and their checks
``trajectory``   control paths, integration, normalization, reparametrization
``solver``       direct transcription with an augmented Lagrangian
``young``        Young-measure relaxation and recovery sequences
``dpm``          projection onto DiPerna-Majda measures
``benchmarks``   built-in problems with analytic reference data
``cli``          ``spacetime-relax`` command line
"""

import os as _os

# must run before numpy loads its BLAS
_threads = _os.environ.get("SPACETIME_RELAX_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import *  # noqa: E402,F401,F403
from .problem import *  # noqa: E402,F401,F403
from .relaxation import *  # noqa: E402,F401,F403
from .trajectory import *  # noqa: E402,F401,F403
from .solver import *  # noqa: E402,F401,F403
from .young import *  # noqa: E402,F401,F403
from .dpm import *  # noqa: E402,F401,F403
from .benchmarks import *  # noqa: E402,F401,F403
from . import io  # noqa: E402,F401

__version__ = "0.1.0"
