"""
Deterministic synthetic fixture: a small source KB, a WikiData-style target KB, the mapping
between them, a gold mapping, and raw train/dev/test/pretrain corpora whose mention surfaces
are entity names (or abbreviations defined in the same document).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from utils.helpers import write_json, write_jsonl

logger = logging.getLogger(__name__)

SYLLABLES = [
    "ka", "lo", "mi", "ra", "ven", "tor", "zel", "qui", "bra", "dor", "fen", "gal", "hux", "jor", "kel",
    "lum", "mor", "nix", "pol", "sar", "tev", "ul", "vor", "wyn", "xal", "yor", "zan", "cri", "plo", "sto",
]
SUFFIXES = ["syndrome", "fibrosis", "deficiency", "carcinoma", "infection", "toxicity", "lesion", "palsy"]
SOURCE_TYPES = [
    "Disease or Syndrome", "Neoplastic Process", "Pharmacologic Substance", "Sign or Symptom",
    "Injury or Poisoning", "Gene or Genome", "Finding", "Congenital Abnormality",
]
TARGET_TYPES = [
    "endocrine system disease", "rare disease", "infectious disease", "chemical compound", "medication",
    "protein-coding gene", "anatomical structure", "symptom", "cancer", "genetic disorder", "skin disease",
    "metabolic disorder",
]
CONTEXT_WORDS = [
    "patients", "presented", "with", "the", "after", "treatment", "cohort", "showed", "reduced", "levels",
    "during", "follow", "clinical", "onset", "study", "we", "observed", "in", "several", "cases", "of",
    "severe", "mild", "chronic", "acute", "was", "associated", "findings", "trial", "response",
]
GLOSS_WORDS = [
    "condition", "marked", "by", "abnormal", "cellular", "growth", "tissue", "damage", "affecting",
    "function", "caused", "variants", "exposure", "commonly", "reported", "among", "adults", "children",
]


@dataclass
class FixtureEntity:
    id: str
    name: str
    abbreviation: Optional[str]
    types: List[str]
    description: Optional[str]


class FixtureBuilder:
    """Builds every fixture file from one seed"""

    def __init__(self, seed: int = 7, entity_count: int = 200, documents: int = 50):
        self.rng = np.random.default_rng(seed)
        self.entity_count = entity_count
        self.documents = documents

    def _coin(self) -> Tuple[str, List[str]]:
        parts = [SYLLABLES[i] for i in self.rng.choice(len(SYLLABLES), size=int(self.rng.integers(2, 4)))]
        return "".join(parts), parts

    def _gloss(self, lead: str, length: int) -> str:
        words = [GLOSS_WORDS[i] for i in self.rng.choice(len(GLOSS_WORDS), size=length)]
        return f"{lead} {' '.join(words)}"

    def build_entities(self) -> List[FixtureEntity]:
        entities: List[FixtureEntity] = []
        names, abbreviations = set(), set()
        while len(entities) < self.entity_count:
            word, parts = self._coin()
            initials = [p[0] for p in parts]
            if self.rng.random() < 0.3:
                suffix = SUFFIXES[int(self.rng.integers(len(SUFFIXES)))]
                name = f"{word} {suffix}"
                initials.append(suffix[0])
            elif self.rng.random() < 0.5:
                second, second_parts = self._coin()
                name = f"{word} {second}"
                initials.append(second_parts[0][0])
            else:
                name = word
            if name in names:
                continue
            names.add(name)

            abbreviation = None
            candidate = "".join(initials).upper()
            if self.rng.random() < 0.3 and len(candidate) >= 2 and candidate not in abbreviations:
                abbreviation = candidate
                abbreviations.add(candidate)

            # one type and a short gloss each, so entity texts stay comparable in length
            types = [SOURCE_TYPES[int(self.rng.integers(len(SOURCE_TYPES)))]]
            description = self._gloss(name, int(self.rng.integers(6, 13))) if self.rng.random() < 0.5 else None
            entities.append(FixtureEntity(f"C{len(entities) + 1:07d}", name, abbreviation, types, description))
        return entities

    def kb_records(self, entities: List[FixtureEntity]) -> List[Dict]:
        records = []
        for e in entities:
            record = {"id": e.id, "name": e.name, "aliases": [e.abbreviation] if e.abbreviation else [],
                      "types": e.types, "source_vocab": "FIXTURE"}
            if e.description:
                record["description"] = e.description
            records.append(record)
        return records

    def target_side(self, entities: List[FixtureEntity]) -> Tuple[List[Dict], List[Dict], List[Tuple[str, str]]]:
        """Target KB records, mapping lines and gold mapping pairs"""
        target, mapping = [], []
        for position, e in enumerate(entities):
            if self.rng.random() >= 0.7:
                continue
            target_id = f"Q{1000 + position}"
            types = [TARGET_TYPES[int(self.rng.integers(len(TARGET_TYPES)))]]
            description = self._gloss(f"{e.name} is a", int(self.rng.integers(6, 13)))
            target.append({"id": target_id, "name": e.name, "types": types, "description": description})
            mapping.append({"source_id": e.id, "target_id": target_id, "target_types": types,
                            "target_description": description})

        gold = []
        for position, line in enumerate(mapping[:40]):
            target_id = line["target_id"]
            if position % 10 == 9:
                target_id = mapping[(position + 1) % len(mapping)]["target_id"]
            gold.append((line["source_id"], target_id))
        return target, mapping, gold

    def _sentence(self, mentions: List[str]) -> Tuple[List[str], List[int]]:
        """Words of one sentence plus the word index where each mention starts"""
        length = int(self.rng.integers(4, 9))
        words = [CONTEXT_WORDS[i] for i in self.rng.choice(len(CONTEXT_WORDS), size=length)]
        words[0] = words[0].capitalize()
        slots = sorted(int(s) for s in self.rng.choice(np.arange(1, length), size=len(mentions), replace=False))
        starts = []
        for offset, (slot, surface) in enumerate(zip(slots, mentions)):
            starts.append(slot + offset)
            words.insert(slot + offset, surface)
        words[-1] = words[-1] + "."
        return words, starts

    def document(self, doc_id: str, entities: List[FixtureEntity], weights: np.ndarray) -> Dict:
        pieces: List[str] = []
        mentions = []
        cursor = 0
        defined = set()
        for _ in range(int(self.rng.integers(3, 8))):
            chosen = [entities[i] for i in self.rng.choice(len(entities), size=int(self.rng.integers(1, 3)), p=weights)]
            surfaces = []
            for e in chosen:
                if e.abbreviation and e.id in defined:
                    surfaces.append(e.abbreviation)
                elif e.abbreviation and self.rng.random() < 0.5:
                    surfaces.append(f"{e.name} ({e.abbreviation})")
                    defined.add(e.id)
                else:
                    surfaces.append(e.name)
            words, starts = self._sentence(surfaces)
            sentence = " ".join(words)
            for e, surface, start in zip(chosen, surfaces, starts):
                char_start = cursor + len(" ".join(words[:start])) + (1 if start else 0)
                span_text = surface.split(" (")[0]
                mentions.append({"start_char": char_start, "end_char": char_start + len(span_text),
                                 "gold_ids": [e.id]})
            pieces.append(sentence)
            cursor += len(sentence) + 1
        return {"doc_id": doc_id, "text": " ".join(pieces), "char_mentions": mentions}

    def write(self, directory: Path) -> Dict[str, Path]:
        directory = Path(directory)
        entities = self.build_entities()
        weights = 1.0 / np.arange(1, len(entities) + 1) ** 0.8
        weights /= weights.sum()
        target, mapping, gold = self.target_side(entities)

        files = {
            "kb": directory / "kb.jsonl",
            "target_kb": directory / "target_kb.jsonl",
            "mapping": directory / "mapping.jsonl",
            "gold_mapping": directory / "gold_mapping.tsv",
            "config": directory / "config.json",
        }
        write_jsonl(files["kb"], self.kb_records(entities))
        write_jsonl(files["target_kb"], target)
        write_jsonl(files["mapping"], mapping)
        files["gold_mapping"].write_text("".join(f"{s}\t{t}\n" for s, t in gold), encoding="utf-8")

        raw = {}
        for split, count in (("train", self.documents), ("dev", self.documents), ("test", self.documents),
                             ("pretrain", self.documents // 2)):
            docs = [self.document(f"{split}-{d:03d}", entities, weights) for d in range(count)]
            if split == "pretrain":
                # documents that also occur in the test split
                docs += [self.document(f"test-{d:03d}", entities, weights) for d in range(2)]
            path = directory / "raw" / f"{split}.jsonl"
            write_jsonl(path, docs)
            raw[split] = f"raw/{split}.jsonl"
            files[f"raw.{split}"] = path

        write_json(files["config"], {
            "dataset": "mm",
            "paths": {
                "kb": "kb.jsonl",
                "mapping": "mapping.jsonl",
                "gold_mapping": "gold_mapping.tsv",
                "target_kb": "target_kb.jsonl",
                "raw": raw,
                "raw_format": "jsonl",
                "output_dir": "output",
            },
            "params": {"embed_dim": 256},
        })
        logger.info(f"Wrote fixture with {len(entities)} entities to {directory}")
        return files


def make_fixture(directory: Path, seed: int = 7) -> Dict[str, Path]:
    return FixtureBuilder(seed=seed).write(directory)
