"""
Embedding store: domain types and on-disk formats
"""
from app.db.models import Corpus, EmbeddingRecord, OpenSetSplit

__all__ = ['Corpus', 'EmbeddingRecord', 'OpenSetSplit']
