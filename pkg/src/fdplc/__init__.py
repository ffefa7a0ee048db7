"""Feature-domain packet loss concealment for a low-bitrate neural speech codec.

Subpackages and modules:

``dsp``         STFT/iSTFT, mel features, WAV I/O
``diffcore``    reverse-mode autodiff, layers, Adam, checkpoints
``backbone``    encoder and decoder (GCRN-style)
``vq``          grouped vector quantizer and the FDPC bitstream
``channel``     packet-loss traces (random and Markov)
``fdplc``       the concealment network (G-TSA)
``ganloss``     discriminators and training losses
``trainer``     training schemes and loop
``evaluation``  MCD, sweeps and reports
``cli``         command-line entry point
"""
from .errors import FdplcError, NumericalFailure, ValidationError

__version__ = "0.1.0"

__all__ = ["FdplcError", "NumericalFailure", "ValidationError", "__version__"]
