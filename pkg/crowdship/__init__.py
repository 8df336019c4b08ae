from .simulation import *
from .prediction import *
from .version import __version__  # noqa: F401
