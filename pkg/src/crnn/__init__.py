"""Segmentation-free digit-string recognition: CNN frame features, a stacked
bidirectional peephole LSTM, CTC training and best-path decoding."""

__version__ = "0.1.0"
