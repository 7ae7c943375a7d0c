"""Radiomics-guided multimodal self-attention network for pCR prediction."""

__version__ = "0.1.0"
