"""Shared tokenizer: lowercase, split on non-alphanumeric, no stemming.

Both the search index and the TF-IDF featurizer use this function, so query
terms line up with feature columns.
"""

from __future__ import annotations

import re

# \w minus underscore keeps unicode letters and digits only.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())
