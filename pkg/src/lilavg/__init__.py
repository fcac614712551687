"""Weighted boundary averages of harmonic functions at desk scale.

Doubling weights and Stieltjes integration against d(1/w), harmonic test
fields on the half-plane, the weighted averages and their Bloch
approximant, sup-normalized Haar analysis with superdyadic martingale
tables, and the stopping-time wavelet series whose Poisson extension
bounds the sharpness of the iterated-logarithm normalizer.
"""

__version__ = "0.1.0"
