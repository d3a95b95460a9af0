"""
Factory classes for the pluggable pipeline components.
Embedders, scorers and sentence segmenters are chosen from the configuration.
"""

import logging
from typing import Any, Dict, Optional

from services.base import ConfigurationManager
from services.corpus_builder import RegexSentenceSegmenter
from services.embedders import HashEmbedder, PrecomputedEmbedder, load_vectors
from services.interfaces import IEmbedder, IScorer, ISentenceSegmenter
from services.reranker import ReferenceScorer, ScoreFileScorer

logger = logging.getLogger(__name__)


class ServiceRegistry:
    """Process-wide cache of the active configuration"""

    _config: Optional[ConfigurationManager] = None

    @classmethod
    def get_config(cls) -> ConfigurationManager:
        """Get configuration manager instance (defaults plus environment)"""
        if cls._config is None:
            cls._config = ConfigurationManager.from_sources()
        return cls._config

    @classmethod
    def set_config(cls, config: ConfigurationManager):
        cls._config = config

    @classmethod
    def clear_registry(cls):
        """Forget the cached configuration (useful for testing)"""
        cls._config = None


class ComponentFactory:
    """Creates embedders, scorers and segmenters with configuration injected"""

    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config or ServiceRegistry.get_config()
        self._components: Dict[str, Any] = {}

    def create_embedder(self) -> IEmbedder:
        """Precomputed vectors when both vector files are configured, hashing otherwise"""
        if "embedder" not in self._components:
            paths = self.config.config.paths
            params = self.config.config.params
            if paths.entity_vectors and paths.context_vectors:
                embedder = PrecomputedEmbedder(load_vectors(paths.entity_vectors), load_vectors(paths.context_vectors))
                logger.info(f"Using precomputed vectors (dim {embedder.dim})")
            else:
                embedder = HashEmbedder(params.embed_dim, params.embed_seed)
                logger.info(f"Using hash embedder (dim {params.embed_dim}, seed {params.embed_seed})")
            self._components["embedder"] = embedder
        return self._components["embedder"]

    def create_scorer(self) -> IScorer:
        """Score file when configured, reference scorer otherwise"""
        if "scorer" not in self._components:
            paths = self.config.config.paths
            params = self.config.config.params
            if paths.scores:
                self._components["scorer"] = ScoreFileScorer.from_file(paths.scores)
            else:
                self._components["scorer"] = ReferenceScorer(params.embed_dim, params.embed_seed)
        return self._components["scorer"]

    def create_segmenter(self) -> ISentenceSegmenter:
        if "segmenter" not in self._components:
            self._components["segmenter"] = RegexSentenceSegmenter()
        return self._components["segmenter"]
