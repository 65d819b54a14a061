""" Spectral sensor encoder for activity recognition with symbolic explanations """
__version__ = '0.3.0'
