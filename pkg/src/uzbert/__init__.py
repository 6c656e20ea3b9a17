"""Desk-scale BERT pretraining and masked-word evaluation for Uzbek Cyrillic text."""

__version__ = "0.1.0"
