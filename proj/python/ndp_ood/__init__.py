"""Point-cloud OOD scoring with a learned per-point distribution prior."""

from ._ndp import *  # noqa: F401,F403
from ._ndp import __version__, run_pipeline, default_config  # noqa: F401
