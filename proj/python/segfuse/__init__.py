from ._segfuse import *  # noqa: F401,F403
from ._segfuse import __doc__  # noqa: F401
