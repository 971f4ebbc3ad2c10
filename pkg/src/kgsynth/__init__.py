"""kgsynth: knowledge-graph driven synthetic data pipeline for closed
information extraction.

Subpackages: kgstore (graph loading/indexing), sampler (coherent triplet-set
sampling with coverage reweighting), textgen (LLM completion client), codec
(triplet-set linearization), decoder (trie-constrained beam search), metrics
(micro/macro evaluation with bootstrap CIs), cli (pipeline orchestration).
"""

__version__ = "0.1.0"
