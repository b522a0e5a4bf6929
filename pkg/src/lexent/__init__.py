"""lexent: lexical ambiguity and contextual uncertainty estimation.

The toolkit is organised as a pipeline over binary embedding stores:

- ``embedstore``: the ``.lexe`` record format (header + packed float32 vectors).
- ``ambiguity``: streaming per-type moment accumulation and the diagonal
  Gaussian entropy bound, plus sense-count entropy from a lexicon table.
- ``probe``: a one-hidden-layer cloze classifier over masked-context states,
  trained with Adam, and per-type surprisal / informativeness scoring.
- ``stats``: correlations, FDR adjustment, standardized OLS, White's
  heteroscedasticity test and a Huber robust line fit.
- ``cli``: ``lexent`` subcommands wiring stores to reports and figures.
"""

__version__ = "0.1.0"

from lexent.errors import (
    LexentError,
    LexentDataError,
    LexentNumericalError,
)

__all__ = [
    "__version__",
    "LexentError",
    "LexentDataError",
    "LexentNumericalError",
]
