"""tbpslab: a desk-scale laboratory for text-to-image person retrieval recipes.

The package trains a tiny two-tower encoder over a synthetic person-retrieval
corpus and reproduces, at toy scale, a full contrastive training recipe:
a suite of contrastive losses with hand-derived analytic gradients, image and
text augmentation policies, training tricks, retrieval metrics, and
model-compression analytics.
"""

__version__ = "0.1.0"
