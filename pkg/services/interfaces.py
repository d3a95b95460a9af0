"""
Interface definitions for the pluggable pipeline seams.
Neural encoders, cross-encoder scorers and sentence splitters plug in behind these contracts.
"""

from abc import ABC, abstractmethod
from typing import List, Optional, Tuple

import numpy as np

from models import MentionRef, TokenSequence


class IEmbedder(ABC):
    """Interface for context/entity encoders compared by inner product"""

    @property
    @abstractmethod
    def dim(self) -> int:
        """Dimension shared by context and entity vectors"""
        pass

    @abstractmethod
    def embed_context(self, seq: TokenSequence, mention_ref: Optional[MentionRef] = None) -> np.ndarray:
        """Encode a context sequence; identical input gives an identical vector"""
        pass

    @abstractmethod
    def embed_entity(self, seq: TokenSequence, entity_id: Optional[str] = None) -> np.ndarray:
        """Encode an entity sequence"""
        pass


class IScorer(ABC):
    """Interface for (mention, candidate) pair scoring"""

    @abstractmethod
    def score(self, pair: TokenSequence, mention_ref: Optional[MentionRef] = None,
              entity_id: Optional[str] = None) -> float:
        """Finite, deterministic score for one pair sequence"""
        pass


class ISentenceSegmenter(ABC):
    """Interface for sentence segmentation"""

    @abstractmethod
    def segment(self, text: str) -> List[Tuple[int, int]]:
        """Character spans of the sentences, in order, covering every non-whitespace character"""
        pass
