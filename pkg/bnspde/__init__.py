from .settings import *
from .spatial import *
from .elliptic import *
from .boundary import *
from .noise import *
from .evolution import *
from .nonlinearity import *
from .solver import *
from .variational import *
from .diagnostics import *

__version__ = "0.1.0"
