"""Helmholtz P1 solver with an optimized Schwarz domain decomposition engine.

The FastAPI app lives in ``helmddm.main``; the command line in ``helmddm.cli``.
"""

__version__ = "0.3.0"
