"""
Pipeline orchestrator.
Runs the file-handoff stages (kb-augment, preprocess, downsample, stats, index, link, evaluate,
negatives), writes a run manifest per stage and sweeps the backoff threshold on the dev split.
"""

import logging
import time
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from models import (
    AnnotatedCorpus, DropCounts, IndexReport, KbAugmentReport, KnowledgeBase, PreprocessReport, PreprocessSplitReport,
    RunManifest, SplitLabel, SplitStatsReport, StatsReport, ThresholdSweep,
)
from services.base import (
    BaseService, ConfigError, ConfigurationManager, MissingInputError, OperationResult, StageStatus, ToolkitError,
    require_file,
)
from services.candidate_index import build_index, load_candidates, mine_hard_negatives, write_candidates, write_negatives
from services.corpus_builder import (
    PreprocessOptions, ambiguity_stats, corpus_stats, dedup_against, downsample, drop_unknown_entities,
    preprocess_corpus,
)
from services.corpus_readers import load_corpus, read_raw_documents, write_corpus
from services.embedders import load_vectors, write_vectors
from services.evaluation import (
    accuracy, build_train_stats, gold_from_corpus, membership_frame, render_report_text, resolve_slices,
    slice_report, surfaces_from_corpus,
)
from services.factory import ComponentFactory
from services.knowledge_base import (
    apply_mapping, augmentation_lift, integration_performance, kb_stats, load_gold_mapping, load_kb, load_mapping,
    mapping_accuracy, write_kb,
)
from services.linker import EntityLinker, embed_entities
from services.postprocess import load_predictions, write_predictions
from services.sequences import build_context_sequence, extract_window
from utils.helpers import file_sha256, read_id_list, text_sha256, write_report

logger = logging.getLogger(__name__)

StageOutcome = Tuple[Dict[str, Path], Dict[str, Path], Dict[str, Any]]  # inputs, outputs, counts

SPLIT_ORDER = [SplitLabel.TRAIN, SplitLabel.DEV, SplitLabel.TEST, SplitLabel.PRETRAIN]


class StageMetrics:
    """Tracks wall-clock durations of stage runs (never written to artifacts)"""

    def __init__(self):
        self.operations: Dict[str, Dict[str, Any]] = {}
        self.errors: List[Dict[str, Any]] = []

    def record_operation(self, operation: str, duration: float, success: bool, details: Dict[str, Any] = None):
        self.operations[operation] = {"duration": duration, "success": success, "details": details or {}}

    def add_error(self, error: str, operation: str = None):
        self.errors.append({"error": error, "operation": operation})

    def get_summary(self) -> Dict[str, Any]:
        successful = sum(1 for op in self.operations.values() if op["success"])
        total = len(self.operations)
        return {
            "total_operations": total,
            "successful_operations": successful,
            "success_rate": successful / total if total > 0 else 0,
            "error_count": len(self.errors),
            "operations": self.operations,
        }


class PipelineOrchestrator(BaseService):
    """Coordinates the stages; each stage reads its inputs from disk and writes its outputs to disk"""

    def __init__(self, config: Optional[ConfigurationManager] = None, factory: Optional[ComponentFactory] = None):
        super().__init__()
        self.config_manager = config or ConfigurationManager()
        self.config = self.config_manager.config
        self.factory = factory or ComponentFactory(self.config_manager)
        self.output_dir = Path(self.config.paths.output_dir)
        self.metrics = StageMetrics()
        self.stages: Dict[str, Callable[[], StageOutcome]] = {
            "kb-augment": self._stage_kb_augment,
            "preprocess": self._stage_preprocess,
            "downsample": self._stage_downsample,
            "stats": self._stage_stats,
            "index": self._stage_index,
            "link": self._stage_link,
            "evaluate": self._stage_evaluate,
            "negatives": self._stage_negatives,
        }

    def _initialize_internal(self):
        resolve_slices(self.config.params.extra_slices)
        for split in self.config.paths.raw:
            self._split(split)
        for split in self.config.paths.corpora:
            self._split(split)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------
    # public entry points
    # ------------------------------------------------------------------

    def run_stage(self, stage: str) -> OperationResult:
        """Run one stage and write its manifest"""
        if stage not in self.stages:
            return OperationResult(
                status=StageStatus.INVALID_CONFIG,
                error_message=f"unknown stage '{stage}'; choose from {', '.join(self.stages)}",
                metadata={"exception": ConfigError(f"unknown stage '{stage}'")},
            )
        if not self._initialized:
            init = self.initialize()
            if not init.is_success:
                return init

        start = time.perf_counter()
        self.logger.info(f"Starting stage {stage}")
        try:
            inputs, outputs, counts = self.stages[stage]()
            manifest = self._write_manifest(stage, inputs, outputs, counts)
        except ToolkitError as e:
            self.metrics.record_operation(stage, time.perf_counter() - start, False, {"error": str(e)})
            self.metrics.add_error(str(e), stage)
            return self.handle_stage_error(e, f"stage {stage}")
        except Exception as e:
            self.metrics.record_operation(stage, time.perf_counter() - start, False, {"error": str(e)})
            self.metrics.add_error(str(e), stage)
            self.logger.error(traceback.format_exc())
            return self.handle_stage_error(e, f"stage {stage}")

        duration = time.perf_counter() - start
        self.metrics.record_operation(stage, duration, True, counts)
        self.logger.info(f"✅ Stage {stage} finished in {duration:.2f}s: {counts}")
        return OperationResult(status=StageStatus.SUCCESS, data=counts, metadata={"manifest": manifest})

    def sweep_threshold(self, grid: Sequence[float]) -> OperationResult:
        """Dev accuracy of backoff + synthesis at each threshold of a de-duplicated grid"""
        if not self._initialized:
            init = self.initialize()
            if not init.is_success:
                return init
        try:
            points = sorted(set(float(t) for t in grid))
            if not points:
                raise ConfigError("threshold grid is empty")
            if any(not 0.0 <= t <= 1.0 for t in points):
                raise ConfigError(f"thresholds must lie in [0, 1], got {points}")

            corpus = load_corpus(self._corpus_path(SplitLabel.DEV), SplitLabel.DEV)
            gold = gold_from_corpus(corpus)
            linker = self._linker(self._augmented_kb())
            output = linker.retrieve_and_rerank(corpus)
            rows = [(t, accuracy(linker.postprocess(output, t), gold)) for t in points]
            best_threshold, best_accuracy = rows[0]
            for threshold, value in rows[1:]:
                if value > best_accuracy:
                    best_threshold, best_accuracy = threshold, value
            sweep = ThresholdSweep(rows=rows, best_threshold=best_threshold, best_accuracy=best_accuracy)

            path = self.output_dir / "sweep.dev.json"
            write_report(path, sweep)
            self.logger.info(f"Best dev threshold {best_threshold} (accuracy {best_accuracy:.4f})")
            return OperationResult(status=StageStatus.SUCCESS, data=sweep, metadata={"path": str(path)})
        except Exception as e:
            return self.handle_stage_error(e, "threshold sweep")

    # ------------------------------------------------------------------
    # shared helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _split(name: str) -> SplitLabel:
        try:
            return SplitLabel(name)
        except ValueError as e:
            raise ConfigError(f"unknown split '{name}'; expected one of {[s.value for s in SplitLabel]}") from e

    def _output(self, name: str) -> Path:
        return self.output_dir / name

    def _corpus_path(self, split: SplitLabel) -> Path:
        configured = self.config.paths.corpora.get(split.value)
        if configured:
            return Path(configured)
        return self._output(f"corpus.{split.value}.jsonl")

    def _load_corpus(self, split: SplitLabel) -> AnnotatedCorpus:
        return load_corpus(require_file(str(self._corpus_path(split)), f"{split.value} corpus"), split)

    def _optional_pretrain(self) -> Optional[AnnotatedCorpus]:
        downsampled = self._output(f"corpus.{SplitLabel.PRETRAIN.value}.downsampled.jsonl")
        path = downsampled if downsampled.exists() else self._corpus_path(SplitLabel.PRETRAIN)
        return load_corpus(path, SplitLabel.PRETRAIN) if path.exists() else None

    def _augmented_kb_path(self) -> Path:
        augmented = self._output("kb.augmented.jsonl")
        return augmented if augmented.exists() else require_file(self.config.paths.kb, "kb")

    def _augmented_kb(self) -> KnowledgeBase:
        return load_kb(self._augmented_kb_path())

    def _linker(self, kb: KnowledgeBase) -> EntityLinker:
        vectors_path = require_file(str(self._output("entity_vectors.tsv")), "entity vectors")
        index = build_index(load_vectors(vectors_path))
        linker = EntityLinker(
            kb, index, self.factory.create_embedder(), self.factory.create_scorer(),
            self.config.params, self.config.toggles, self.config.jobs,
        )
        result = linker.initialize()
        if not result.is_success:
            raise result.metadata["exception"]
        return linker

    def _write_manifest(self, stage: str, inputs: Dict[str, Path], outputs: Dict[str, Path],
                        counts: Dict[str, Any]) -> RunManifest:
        manifest = RunManifest(
            stage=stage,
            config_sha256=text_sha256(self.config_manager.config_hash_payload()),
            inputs={name: file_sha256(path) for name, path in sorted(inputs.items())},
            outputs={name: file_sha256(path) for name, path in sorted(outputs.items())},
            counts=counts,
        )
        write_report(self._output(f"manifests/{stage}.json"), manifest)
        return manifest

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------

    def _stage_kb_augment(self) -> StageOutcome:
        paths = self.config.paths
        kb_path = require_file(paths.kb, "kb")
        kb = load_kb(kb_path)
        inputs = {"kb": kb_path}

        augmented = kb
        if paths.mapping:
            mapping_path = require_file(paths.mapping, "mapping")
            inputs["mapping"] = mapping_path
            mapping = load_mapping(mapping_path)
            augmented = apply_mapping(kb, mapping, self.config.params.desc_word_limit)
        else:
            mapping = None
            self.logger.warning("No mapping configured; the augmented KB equals the source KB")

        before, after = kb_stats(kb), kb_stats(augmented)
        report = KbAugmentReport(before=before, after=after, lift=augmentation_lift(before, after))
        if mapping is not None and paths.gold_mapping:
            gold_path = require_file(paths.gold_mapping, "gold_mapping")
            inputs["gold_mapping"] = gold_path
            gold = load_gold_mapping(gold_path)
            report.mapping_accuracy = mapping_accuracy(mapping, gold)
            if paths.target_kb:
                target_path = require_file(paths.target_kb, "target_kb")
                inputs["target_kb"] = target_path
                report.integration_performance = integration_performance(mapping, gold, load_kb(target_path))

        kb_out = self._output("kb.augmented.jsonl")
        stats_out = self._output("kb_stats.json")
        write_kb(augmented, kb_out)
        write_report(stats_out, report)
        counts = {"entities": len(augmented), "distinct_types": after.distinct_type_count,
                  "described": after.described_entity_count}
        return inputs, {"kb_augmented": kb_out, "kb_stats": stats_out}, counts

    def _stage_preprocess(self) -> StageOutcome:
        paths, params, toggles = self.config.paths, self.config.params, self.config.toggles
        if not paths.raw:
            raise MissingInputError("raw corpora (paths.raw)")
        options = PreprocessOptions(
            expand_abbreviations=toggles.expand_abbreviations,
            drop_overlapping=toggles.drop_overlapping,
            group_size=params.group_size,
            segmenter=self.factory.create_segmenter(),
        )
        kb = None
        inputs: Dict[str, Path] = {}
        if toggles.drop_unknown_entities:
            kb_path = self._augmented_kb_path()
            inputs["kb"] = kb_path
            kb = load_kb(kb_path)

        splits = [s for s in SPLIT_ORDER if s.value in paths.raw]
        corpora: Dict[SplitLabel, AnnotatedCorpus] = {}
        report: Dict[str, PreprocessSplitReport] = {}
        outputs: Dict[str, Path] = {}
        for split in splits:
            raw_path = require_file(paths.raw[split.value], f"raw {split.value} corpus")
            inputs[f"raw.{split.value}"] = raw_path
            docs, unlinkable = read_raw_documents(raw_path, paths.raw_format)
            corpus, drops = preprocess_corpus(docs, split, options, self.config.jobs)
            drops = drops.merged(DropCounts(unlinkable=unlinkable))
            if kb is not None:
                corpus, unknown = drop_unknown_entities(corpus, kb)
                drops = drops.merged(DropCounts(unknown_entity=unknown))

            removed = 0
            if split == SplitLabel.PRETRAIN and toggles.dedup_pretrain:
                evaluation_sets = [corpora[s] for s in (SplitLabel.DEV, SplitLabel.TEST) if s in corpora]
                corpus, removed = dedup_against(corpus, evaluation_sets)
                self.logger.info(f"Removed {removed} pretraining groups of documents found in dev/test")

            corpora[split] = corpus
            out = self._output(f"corpus.{split.value}.jsonl")
            write_corpus(corpus, out)
            outputs[f"corpus.{split.value}"] = out
            report[split.value] = PreprocessSplitReport(
                documents_read=len(docs),
                drops=drops,
                dropped_total=drops.total,
                dedup_removed_groups=removed,
                stats=corpus_stats(corpus),
            )

        report_path = self._output("preprocess_report.json")
        write_report(report_path, PreprocessReport(report))
        outputs["preprocess_report"] = report_path
        counts = {split: entry.stats.mentions for split, entry in report.items()}
        return inputs, outputs, counts

    def _stage_downsample(self) -> StageOutcome:
        inputs, outputs, counts = {}, {}, {}
        for split in self.config.params.downsample_splits:
            source = self._corpus_path(split)
            corpus = self._load_corpus(split)
            reduced, removed = downsample(corpus, self.config.params.downsample_threshold)
            out = self._output(f"corpus.{split.value}.downsampled.jsonl")
            write_corpus(reduced, out)
            inputs[f"corpus.{split.value}"] = source
            outputs[f"corpus.{split.value}.downsampled"] = out
            counts[split.value] = {"groups_kept": len(reduced.groups), "groups_removed": removed}
        return inputs, outputs, counts

    def _stage_stats(self) -> StageOutcome:
        inputs: Dict[str, Path] = {}
        report: Dict[str, SplitStatsReport] = {}
        for split in SPLIT_ORDER:
            path = self._corpus_path(split)
            if not path.exists():
                continue
            corpus = load_corpus(path, split)
            inputs[f"corpus.{split.value}"] = path
            report[split.value] = SplitStatsReport(corpus=corpus_stats(corpus), ambiguity=ambiguity_stats(corpus))
        if not report:
            raise MissingInputError("corpus", str(self.output_dir))
        out = self._output("stats.json")
        write_report(out, StatsReport(report))
        counts = {split: entry.corpus.mentions for split, entry in report.items()}
        return inputs, {"stats": out}, counts

    def _stage_index(self) -> StageOutcome:
        kb_path = self._augmented_kb_path()
        kb = load_kb(kb_path)
        inputs = {"kb": kb_path}
        vectors = embed_entities(kb, self.factory.create_embedder(), self.config.params, self.config.jobs)

        pool_filter = None
        if self.config.paths.pool_filter:
            filter_path = require_file(self.config.paths.pool_filter, "pool_filter")
            inputs["pool_filter"] = filter_path
            pool_filter = read_id_list(filter_path)
        index = build_index(vectors, pool_filter)

        vectors_out = self._output("entity_vectors.tsv")
        report_out = self._output("index_report.json")
        write_vectors({entity_id: vectors[entity_id] for entity_id in index.ids}, vectors_out)
        write_report(report_out, IndexReport(pool_size=len(index), dim=index.dim, missing_ids=index.missing_ids))
        counts = {"pool_size": len(index), "missing_ids": len(index.missing_ids)}
        return inputs, {"entity_vectors": vectors_out, "index_report": report_out}, counts

    def _stage_link(self) -> StageOutcome:
        split = self.config.link_split
        corpus_path = require_file(str(self._corpus_path(split)), f"{split.value} corpus")
        corpus = load_corpus(corpus_path, split)
        kb_path = self._augmented_kb_path()
        linker = self._linker(load_kb(kb_path))
        output = linker.link(corpus, self.config.effective_threshold)

        candidates_out = self._output(f"candidates.{split.value}.jsonl")
        predictions_out = self._output(f"predictions.{split.value}.jsonl")
        write_candidates(output.candidate_sets, candidates_out)
        written = write_predictions(output.predictions, predictions_out)
        inputs = {"kb": kb_path, f"corpus.{split.value}": corpus_path,
                  "entity_vectors": self._output("entity_vectors.tsv")}
        outputs = {"candidates": candidates_out, "predictions": predictions_out}
        return inputs, outputs, {"mentions": written, "threshold": self.config.effective_threshold}

    def _stage_evaluate(self) -> StageOutcome:
        split = self.config.link_split
        predictions_path = require_file(str(self._output(f"predictions.{split.value}.jsonl")), "predictions")
        predictions = load_predictions(predictions_path)
        corpus_path = require_file(str(self._corpus_path(split)), f"{split.value} corpus")
        corpus = load_corpus(corpus_path, split)
        gold, surfaces = gold_from_corpus(corpus), surfaces_from_corpus(corpus)
        train_path = require_file(str(self._corpus_path(SplitLabel.TRAIN)), "train corpus")
        stats = build_train_stats(load_corpus(train_path, SplitLabel.TRAIN), self._optional_pretrain())
        kb_path = require_file(self.config.paths.kb, "kb")
        pre_aug_kb = load_kb(kb_path)

        inputs = {"predictions": predictions_path, f"corpus.{split.value}": corpus_path,
                  "corpus.train": train_path, "kb": kb_path}
        candidates_path = self._output(f"candidates.{split.value}.jsonl")
        candidate_sets = None
        if candidates_path.exists():
            candidate_sets = load_candidates(candidates_path)
            inputs["candidates"] = candidates_path

        extra = resolve_slices(self.config.params.extra_slices)
        report = slice_report(predictions, gold, surfaces, stats, pre_aug_kb, candidate_sets, extra)
        json_out = self._output(f"report.{split.value}.json")
        text_out = self._output(f"report.{split.value}.txt")
        csv_out = self._output(f"slices.{split.value}.csv")
        write_report(json_out, report)
        text_out.write_text(render_report_text(report), encoding="utf-8")
        frame = membership_frame(predictions, gold, surfaces, stats, pre_aug_kb, extra)
        frame.to_csv(csv_out, index=False, lineterminator="\n")

        outputs = {"report_json": json_out, "report_text": text_out, "slices_csv": csv_out}
        return inputs, outputs, {"mentions": report.mention_count, "accuracy": report.overall_accuracy}

    def _stage_negatives(self) -> StageOutcome:
        corpus_path = require_file(str(self._corpus_path(SplitLabel.TRAIN)), "train corpus")
        corpus = load_corpus(corpus_path, SplitLabel.TRAIN)
        vectors_path = require_file(str(self._output("entity_vectors.tsv")), "entity vectors")
        index = build_index(load_vectors(vectors_path))
        embedder = self.factory.create_embedder()
        params = self.config.params

        queries = []
        for ref, group, mention in corpus.iter_mentions():
            window = extract_window(group, mention, params.window_len)
            context = build_context_sequence(window, params.context_max)
            queries.append((ref, embedder.embed_context(context, ref), mention.gold_id))
        negatives = mine_hard_negatives(index, queries, params.negatives_n, self.config.jobs)

        out = self._output("negatives.train.jsonl")
        written = write_negatives(negatives, out)
        return {"corpus.train": corpus_path, "entity_vectors": vectors_path}, {"negatives": out}, {"mentions": written}

