"""Text-based energy prediction for adsorbate-catalyst systems.

Pipeline: relaxed structures -> three-section text strings -> word-level
tokens -> transformer encoder. The encoder can be pretrained against frozen
graph embeddings (contrastive) or with dynamic-mask MLM, then fine-tuned on
configuration energies. Analysis tools cover sectional attention, duplicate
text sets, and cross-relaxer uncertainty.
"""

from adstext.errors import AdstextError, NumericsError, ValidationError

__version__ = "0.1.0"

__all__ = ["AdstextError", "ValidationError", "NumericsError", "__version__"]
