"""Range-R bond percolation, SIR epidemics and the dominating branching random walk."""

__version__ = "0.1.0"
