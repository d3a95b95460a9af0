"""
Entity linking service: context embedding -> exact retrieval -> reranking -> post-processing.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from models import (
    AnnotatedCorpus, CandidateSet, KnowledgeBase, MentionRef, MentionSpan, ParamsConfig, Prediction, RerankResult,
    SentenceGroup, TogglesConfig,
)
from services.base import BaseService, DimensionMismatchError
from services.candidate_index import CandidateIndex, top_k
from services.embedders import PrecomputedEmbedder
from services.interfaces import IEmbedder, IScorer
from services.postprocess import postprocess_predictions
from services.reranker import rerank
from services.sequences import build_context_sequence, build_entity_sequence, extract_window


def embed_entities(kb: KnowledgeBase, embedder: IEmbedder, params: ParamsConfig, jobs: int = 1) -> Dict[str, np.ndarray]:
    """Entity vectors for the whole KB (titles without aliases)"""
    if isinstance(embedder, PrecomputedEmbedder):
        return {entity_id: embedder.embed_entity_id(entity_id) for entity_id in sorted(kb.entities)
                if entity_id in embedder.entity_vectors}

    def encode(entity_id: str) -> Tuple[str, np.ndarray]:
        seq = build_entity_sequence(kb.entities[entity_id], False, params.types_word_limit, params.entity_max)
        return entity_id, embedder.embed_entity(seq, entity_id)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return dict(pool.map(encode, sorted(kb.entities)))


@dataclass
class LinkOutput:
    """Everything one linking pass produces, keyed and ordered by mention_ref"""
    candidate_sets: List[CandidateSet] = field(default_factory=list)
    rerank_results: Dict[MentionRef, RerankResult] = field(default_factory=dict)
    predictions: List[Prediction] = field(default_factory=list)

    @property
    def model_predictions(self) -> List[Prediction]:
        return [self.rerank_results[cs.mention_ref].prediction for cs in self.candidate_sets]


class EntityLinker(BaseService):
    """Links every mention of a corpus against a candidate index"""

    def __init__(self, kb: KnowledgeBase, index: CandidateIndex, embedder: IEmbedder, scorer: IScorer,
                 params: ParamsConfig, toggles: TogglesConfig, jobs: int = 1):
        super().__init__()
        self.kb = kb
        self.index = index
        self.embedder = embedder
        self.scorer = scorer
        self.params = params
        self.toggles = toggles
        self.jobs = max(1, jobs)

    def _initialize_internal(self):
        if self.embedder.dim != self.index.dim:
            raise DimensionMismatchError(f"embedder dim {self.embedder.dim} differs from index dim {self.index.dim}")
        self.logger.info(f"Linker ready: {len(self.index)} pool entities, k={self.params.k}, jobs={self.jobs}")

    def link_mention(self, ref: MentionRef, group: SentenceGroup, mention: MentionSpan) -> Tuple[CandidateSet, RerankResult]:
        params = self.params
        window = extract_window(group, mention, params.window_len)
        context = build_context_sequence(window, params.context_max)
        query = self.embedder.embed_context(context, ref)
        candidates = top_k(self.index, query, params.k, mention_ref=ref, shards=params.shards)
        result = rerank(candidates, window, self.kb, self.scorer, params.pair_context_max, params.entity_max,
                        params.types_word_limit)
        return candidates, result

    def retrieve_and_rerank(self, corpus: AnnotatedCorpus) -> LinkOutput:
        self.ensure_initialized()
        mentions = list(corpus.iter_mentions())
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            results = pool.map(lambda item: self.link_mention(*item), mentions)
            if self.toggles.progress:
                results = tqdm(results, total=len(mentions), desc=f"linking {corpus.split_label.value}")
            linked = list(results)

        output = LinkOutput()
        for candidates, result in linked:
            output.candidate_sets.append(candidates)
            output.rerank_results[candidates.mention_ref] = result
        self.logger.info(f"Retrieved and reranked {len(mentions)} {corpus.split_label.value} mentions")
        return output

    def postprocess(self, output: LinkOutput, threshold: float) -> List[Prediction]:
        candidate_sets = {cs.mention_ref: cs for cs in output.candidate_sets}
        return postprocess_predictions(
            output.model_predictions, output.rerank_results, candidate_sets, self.kb, threshold,
            use_backoff=self.toggles.backoff, use_synthesis=self.toggles.synthesis,
        )

    def link(self, corpus: AnnotatedCorpus, threshold: float) -> LinkOutput:
        output = self.retrieve_and_rerank(corpus)
        output.predictions = self.postprocess(output, threshold)
        return output
