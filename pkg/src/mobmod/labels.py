"""Class labels and their fixed ordering.

The order is load-bearing: probability vectors, class-embedding matrices and
the argmax tie rule all follow CLASS_ORDER.
"""

MALICIOUS = "malicious"
BENIGN = "benign"

CLASS_ORDER: tuple[str, ...] = (MALICIOUS, BENIGN)

SPLITS: tuple[str, ...] = ("train", "val", "test")


def validate_label(label: str) -> str:
    if label not in CLASS_ORDER:
        raise ValueError(f"unknown label {label!r}; allowed: {', '.join(CLASS_ORDER)}")
    return label


def validate_split(split: str) -> str:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; allowed: {', '.join(SPLITS)}")
    return split


def label_index(label: str) -> int:
    return CLASS_ORDER.index(validate_label(label))
