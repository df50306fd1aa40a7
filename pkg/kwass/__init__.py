"""
kwass: Wasserstein stability of kinetic equations.

Optimal transport distances between phase-space particle ensembles,
particle solvers for the Vlasov and ε-scaled Vlasov-Poisson systems, and the
closed-form stability bounds they are checked against.
"""

__version__ = "0.1.0"
