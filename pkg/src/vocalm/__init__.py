"""vocalm: a desk-scale textless language-modeling pipeline for marmoset
vocalizations: segmentation, features, discrete units, unit LMs, zero-shot
benchmarks, and evaluation metrics, with synthetic oracles throughout."""

__version__ = "0.1.0"
