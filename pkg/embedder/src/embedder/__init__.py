"""Document embedding export for the press-release pipeline.

Produces per-document 768-dim mean-pooled vectors (EMB1) and per-document
token embedding matrices with token strings (TOK1) from a pretrained
transformer checkpoint.
"""

from .encode import EmbedJob, embed_documents, mean_pool
from .formats import write_emb1, write_tok1

__all__ = ["EmbedJob", "embed_documents", "mean_pool", "write_emb1",
           "write_tok1"]
