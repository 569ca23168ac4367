from .utils import *
from .exceptions import *
from .cache import FluxCache, quantize
from .linalg import linear_solve, pcg
from .newton import NewtonInfo, NewtonProblem, damped_newton
from .runlog import RunLogger
