"""RUL prediction from Jensen-Shannon divergence of latent-state priors."""

__version__ = "0.1.0"

from .errors import NumericError, ParseError, ValidationError

__all__ = ["NumericError", "ParseError", "ValidationError", "__version__"]
