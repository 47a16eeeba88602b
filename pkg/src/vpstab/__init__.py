"""Numerical laboratory for energy-Casimir steady states of the gravitational
Vlasov-Poisson system and their nonlinear stability under general perturbations."""

__version__ = "0.1.0"
