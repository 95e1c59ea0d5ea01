"""
Contrastive loss and retrieval metrics
======================================

"""

import numpy as np

from embed_curation import EmbeddingBatch
from embed_curation.oracles import finite_difference_grads, random_batch, relative_error
from embed_curation.verification import info_nce_loss, mean_average_precision, ndcg, similarity_matrix

rng = np.random.default_rng(0)
batch = random_batch(rng, b=8, d=16, temperature=0.07)
print(np.round(similarity_matrix(batch), 2))

report = info_nce_loss(batch)
print("loss", report.loss)

# analytic gradients against central differences
fd_v, fd_t = finite_difference_grads(batch)
print("relative error", relative_error(report.gradient_video, fd_v), relative_error(report.gradient_text, fd_t))

# a perfectly aligned batch drives the loss towards zero
aligned = EmbeddingBatch(np.eye(4) * 3, np.eye(4) * 3, 0.07)
print("aligned loss", info_nce_loss(aligned).loss)

print(mean_average_precision([[1, 0, 1, 0], [0, 0, 1, 1], [0, 0, 0, 0]]))
print("nDCG", ndcg([3, 0, 2, 1]))
