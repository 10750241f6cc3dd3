"""Customer segmentation from transaction sequences.

Feature extraction by DTW distance profiles, RFM scores, an LSTM
encoder-decoder latent space and their hybrid, followed by k-means and
cluster validity indices.
"""

__version__ = "0.1.0"
