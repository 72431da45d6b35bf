"""Prompt template generation, rendering, and library file I/O.

Strategies:
  default/context  — the standard prompt plus its two cartoon-context variants
  pair             — every clip-token x context-token pair through three formats
  feature          — class-specific templates over unordered feature-token pairs
  apriori          — pair formats regenerated from mined frequent token pairs
  library          — templates loaded verbatim from a text file

Formats substitute tokens literally ("a image", "a example"): matching the
published prompt strings outweighs article grammar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from mobmod.labels import BENIGN, MALICIOUS

PLACEHOLDER = "{}"

STRATEGIES = ("default", "context", "pair", "feature", "apriori", "library")

CLIP_NS = "clip:"
CTX_NS = "ctx:"
FEAT_NS = "feat:"
FMT_NS = "fmt:"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """A format string with the class placeholder "{}" exactly once.

    Feature-strategy templates carry their feature words already substituted;
    provenance_tokens records the namespaced tokens that generated the
    template (e.g. "clip:image", "ctx:cartoon", "fmt:1").
    """

    id: str
    format: str
    strategy: str
    provenance_tokens: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.format.count(PLACEHOLDER) != 1:
            raise PromptError(
                f"template {self.id!r} must contain exactly one {PLACEHOLDER!r}: {self.format!r}"
            )
        if self.strategy not in STRATEGIES:
            raise PromptError(f"unknown strategy {self.strategy!r}")


@dataclass
class PromptSet:
    """Ordered templates; per_class routes feature-strategy templates."""

    templates: list[PromptTemplate]
    per_class: dict[str, list[str]] | None = None  # label -> template ids
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.id for t in self.templates]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise PromptError(f"duplicate template ids: {dupes}")
        if self.per_class is not None:
            known = set(ids)
            routed = [tid for tids in self.per_class.values() for tid in tids]
            if len(set(routed)) != len(routed) or not set(routed) <= known:
                raise PromptError("per_class must partition a subset of template ids")

    def by_id(self, template_id: str) -> PromptTemplate:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise KeyError(template_id)

    def class_templates(self, label: str) -> list[PromptTemplate]:
        """Templates contributing to one class: routed subset, else all."""
        if self.per_class is not None and label in self.per_class:
            wanted = set(self.per_class[label])
            return [t for t in self.templates if t.id in wanted]
        return list(self.templates)


@dataclass(frozen=True)
class TokenLists:
    clip_tokens: tuple[str, ...]
    context_tokens: tuple[str, ...]
    malicious_features: tuple[str, ...] = ()
    benign_features: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("clip_tokens", "context_tokens", "malicious_features", "benign_features"):
            tokens = getattr(self, name)
            if len(set(tokens)) != len(tokens):
                raise PromptError(f"duplicate tokens in {name}")


# Token lists published for the MOB benchmark; "initial" feeds the exhaustive
# pair sweep, "candidate" the downstream pair/feature strategies.
INITIAL_TOKEN_LISTS = TokenLists(
    clip_tokens=("photo", "video", "example", "demonstration", "image"),
    context_tokens=("cartoon", "animation", "caricature", "comic", "character"),
)

CANDIDATE_TOKEN_LISTS = TokenLists(
    clip_tokens=("image", "example"),
    context_tokens=("cartoon", "caricature", "comic"),
    malicious_features=(
        "fast-moving",
        "scary",
        "disgusting",
        "hurting",
        "destructive",
        "killing",
        "obscene",
        "indecent",
    ),
    benign_features=(
        "good",
        "friendly",
        "happy",
        "joyful",
        "singing",
        "enjoying",
        "loving",
        "caring",
        "playing",
        "funny",
    ),
)

BUILTIN_TOKEN_LISTS = {"initial": INITIAL_TOKEN_LISTS, "candidate": CANDIDATE_TOKEN_LISTS}


def load_token_lists(path: str | Path) -> TokenLists:
    """Load token lists from a JSON object of key -> string array."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise PromptError(f"{path}: expected a JSON object")
    kwargs = {}
    for key in ("clip_tokens", "context_tokens", "malicious_features", "benign_features"):
        value = data.get(key, [])
        if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
            raise PromptError(f"{path}: key {key!r} must be an array of strings")
        kwargs[key] = tuple(value)
    return TokenLists(**kwargs)


def render(template: PromptTemplate, class_name: str) -> str:
    """Substitute the class name literally; everything else is verbatim."""
    if not class_name:
        raise ValueError("class_name must be non-empty")
    return template.format.replace(PLACEHOLDER, class_name, 1)


def default_templates() -> PromptSet:
    """The standard prompt plus the two cartoon-context variants."""
    return PromptSet(
        templates=[
            PromptTemplate("default:1", "a photo of a {}.", "default", frozenset({f"{FMT_NS}default"})),
            PromptTemplate("context:1", "a {} cartoon.", "context", frozenset({f"{FMT_NS}context-1"})),
            PromptTemplate(
                "context:2", "a photo of a {} cartoon.", "context", frozenset({f"{FMT_NS}context-2"})
            ),
        ]
    )


def pair_formats(clip_token: str, context_token: str) -> tuple[str, str, str]:
    """The three clip/context prompt formats; the third ignores the clip token."""
    return (
        f"a {clip_token} of a {{}} {context_token}.",
        f"a {clip_token} of a {context_token} which is {{}}.",
        f"a {context_token} which is {{}}.",
    )


def generate_pair_templates(
    tokens: TokenLists, *, pairs: list[tuple[str, str]] | None = None, strategy: str = "pair"
) -> PromptSet:
    """Generate all (clip, context) pair templates through the three formats.

    The context-only third format repeats across clip tokens; duplicates are
    dropped by format string and the pre-dedup count kept in metadata.
    """
    if pairs is None:
        if not tokens.clip_tokens or not tokens.context_tokens:
            raise PromptError("clip_tokens and context_tokens must be non-empty")
        pairs = [(c, x) for c in tokens.clip_tokens for x in tokens.context_tokens]

    templates: list[PromptTemplate] = []
    seen_formats: set[str] = set()
    raw_count = 0
    for clip, ctx in pairs:
        formats = pair_formats(clip, ctx)
        raw_count += len(formats)
        for idx, fmt in enumerate(formats, start=1):
            if fmt in seen_formats:
                continue
            seen_formats.add(fmt)
            provenance = {f"{CTX_NS}{ctx}", f"{FMT_NS}{idx}"}
            if idx == 3:
                tid = f"{strategy}:{ctx}:f3"
            else:
                tid = f"{strategy}:{clip}:{ctx}:f{idx}"
                provenance.add(f"{CLIP_NS}{clip}")
            templates.append(PromptTemplate(tid, fmt, strategy, frozenset(provenance)))
    return PromptSet(templates=templates, metadata={"pre_dedup_count": raw_count})


def generate_feature_templates(tokens: TokenLists) -> PromptSet:
    """Per class, one template for each (clip, context) pair and each unordered
    pair of distinct class-matched feature tokens."""
    if not tokens.clip_tokens or not tokens.context_tokens:
        raise PromptError("clip_tokens and context_tokens must be non-empty")
    feature_lists = {MALICIOUS: tokens.malicious_features, BENIGN: tokens.benign_features}
    for label, features in feature_lists.items():
        if len(features) < 2:
            raise PromptError(f"{label} feature list needs at least 2 tokens")

    templates: list[PromptTemplate] = []
    per_class: dict[str, list[str]] = {}
    for label, features in feature_lists.items():
        ids: list[str] = []
        for clip in tokens.clip_tokens:
            for ctx in tokens.context_tokens:
                for feat_a, feat_b in combinations(features, 2):
                    fmt = f"a {clip} of a {{}} {ctx} which is {feat_a} and {feat_b}."
                    tid = f"feature:{label}:{clip}:{ctx}:{feat_a}+{feat_b}"
                    provenance = frozenset(
                        {
                            f"{CLIP_NS}{clip}",
                            f"{CTX_NS}{ctx}",
                            f"{FEAT_NS}{feat_a}",
                            f"{FEAT_NS}{feat_b}",
                            f"{FMT_NS}feature",
                        }
                    )
                    templates.append(PromptTemplate(tid, fmt, "feature", provenance))
                    ids.append(tid)
        per_class[label] = ids
    return PromptSet(templates=templates, per_class=per_class)


def load_template_library(path: str | Path) -> PromptSet:
    """One template per non-comment line; '#' lines and blank lines ignored."""
    templates: list[PromptTemplate] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            count = line.count(PLACEHOLDER)
            if count != 1:
                raise PromptError(
                    f"{path}: line {line_no} has {count} {PLACEHOLDER!r} placeholders, expected 1"
                )
            templates.append(PromptTemplate(f"library:{line_no}", line, "library"))
    if not templates:
        raise PromptError(f"{path}: no templates found")
    return PromptSet(templates=templates)


def write_template_library(prompt_set: PromptSet, path: str | Path) -> int:
    """Write one template format per line; returns the line count."""
    lines = [t.format for t in prompt_set.templates]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    return len(lines)
