"""steklab - Steklov and Laplace-Beltrami spectra of meshed domains"""

__version__ = "0.1.0"
