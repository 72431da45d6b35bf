"""Malicious-or-benign cartoon clip classification.

Frozen vision/text encoders, a trainable 768 -> 512 projection layer,
temporal pooling, and prompt-ensemble text supervision, plus the four
prompt-generation strategies (default/context, clip x context pairs,
feature combinations, frequent-itemset regeneration).
"""

__version__ = "0.1.0"

from mobmod.labels import BENIGN, CLASS_ORDER, MALICIOUS

__all__ = ["BENIGN", "CLASS_ORDER", "MALICIOUS", "__version__"]
