"""Tight-binding chain with dephasing: Liouvillian, Hubbard mapping, Bethe ansatz,
strings and correlator dynamics."""

__version__ = "0.1.0"

from .fock_space import DomainError, LatticeSpec, Sector  # noqa: E402

__all__ = ["__version__", "DomainError", "LatticeSpec", "Sector"]
