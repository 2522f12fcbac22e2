"""Penalized backward McKean-Vlasov SDEs with maximal monotone drift."""

__version__ = "0.1.0"
