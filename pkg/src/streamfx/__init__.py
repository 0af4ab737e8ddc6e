"""Stream-computing engine with an FX autocorrelation spectrometer."""

__version__ = "0.1.0"
