"""Spectral solver and verification harness for relativistic bag-model boundary problems.

Submodules are imported explicitly (``from bagspec import kernels``); the top-level
package stays import-light so the command line tool can configure threading before
numpy loads.
"""

__version__ = "0.1.0"
