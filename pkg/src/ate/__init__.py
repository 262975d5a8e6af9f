"""Aspect term extraction with LSTM/BiLSTM taggers, optional character
features and a CRF head, plus exact-match evaluation and rank statistics."""

__version__ = "0.1.0"
