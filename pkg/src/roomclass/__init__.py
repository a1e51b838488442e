"""Room classification from reverberant speech spectrograms.

Subpackages and modules:

* :mod:`roomclass.dsp` -- convolution, log-power STFT, spectral frame features, WAV I/O
* :mod:`roomclass.acoustics` -- EDC, reverberation time, DRR, FDRT, synthetic AIRs
* :mod:`roomclass.nn` -- numpy layers with hand-written backprop, Adam, gradient checks
* :mod:`roomclass.models` -- the five candidate networks and the FDRT baselines
* :mod:`roomclass.data` -- utterances, balanced batches, fold plans, synthetic corpora
* :mod:`roomclass.traineval` -- training with early stopping, evaluation, cross-validation
* :mod:`roomclass.analysis` -- linear probes (CCC) and attention/spectral-feature correlation
"""

from roomclass.errors import (
    AnechoicInputError,
    DataError,
    InsufficientDecayError,
    NumericalError,
    RateMismatchError,
)

__version__ = "0.1.0"

__all__ = [
    "AnechoicInputError",
    "DataError",
    "InsufficientDecayError",
    "NumericalError",
    "RateMismatchError",
    "__version__",
]
