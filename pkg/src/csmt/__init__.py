"""csmt: constraining NMT with pre-specified translations via code-switched sources.

The pipeline: align a parallel corpus (IBM Model 1), extract a pruned phrase
table, sample code-switched augmented training data, train a transformer whose
source side may embed target-language tokens (merged vocabulary, shared target
embeddings, or shared embeddings plus a copy mixture), then decode with plain
beam search after rewriting constrained source phrases.
"""

__version__ = "0.1.0"
