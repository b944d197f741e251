"""charlab: closed characteristics on star-shaped surfaces in R^{2n}.

Pipeline: geometry -> flow -> orbits -> index -> resonance, driven by the
``charlab`` command-line tool.
"""

__version__ = "0.1.0"
