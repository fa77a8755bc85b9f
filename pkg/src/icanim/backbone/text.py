"""Frozen byte-level text encoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

PAD_ID = 256


@dataclass
class TextTokens:
    ids: torch.Tensor  # (B, L) int64, PAD_ID marks padding
    embeddings: torch.Tensor  # (B, L, text_dim)

    @property
    def padding(self) -> torch.Tensor:
        """(B, L) bool, True where the position is padding."""
        pad = self.ids == PAD_ID
        # an all-padding row still attends to its first slot
        pad[:, 0] = False
        return pad


class ByteTextEncoder(nn.Module):
    """UTF-8 bytes -> fixed random embedding rows; never trained."""

    def __init__(self, dim: int, max_len: int = 96):
        super().__init__()
        self.max_len = max_len
        self.table = nn.Embedding(257, dim)
        nn.init.normal_(self.table.weight, std=1.0)
        self.table.weight.requires_grad_(False)

    def tokenize(self, text: str) -> list[int]:
        ids = list(text.encode("utf-8"))
        if len(ids) > self.max_len:
            logger.warning("text of %d bytes truncated to %d", len(ids), self.max_len)
            ids = ids[: self.max_len]
        return ids or [PAD_ID]

    def forward(self, texts: list[str] | str) -> TextTokens:
        if isinstance(texts, str):
            texts = [texts]
        rows = [self.tokenize(t) for t in texts]
        L = max(len(r) for r in rows)
        ids = torch.full((len(rows), L), PAD_ID, dtype=torch.long)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r)
        with torch.no_grad():
            emb = self.table(ids)
        return TextTokens(ids, emb)
