from ._milo import *  # noqa: F401,F403
