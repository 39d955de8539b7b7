"""Physics-embedded Fourier neural operator toolkit"""

__all__ = ()
