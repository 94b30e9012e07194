"""Classical predictive-coding algorithms and architecture accounting.

Submodules:
    core          dense numerics helpers, seeded RNG, finite-difference oracle
    rao_ballard   hierarchical predictive elements with tied feedback weights
    dim           divisive input modulation (NMF-style multiplicative updates)
    free_energy   scalar and multi-layer free-energy node dynamics
    pcn           predictive activation update on a fully connected classifier
    archproto     architecture graphs, protocol checks, parameter counts
    cli           the ``predcode`` command-line front end
"""

__version__ = "0.1.0"
