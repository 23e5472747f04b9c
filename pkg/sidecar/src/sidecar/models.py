"""Prompt templates and the relevance models served by the sidecar.

Every model maps a batch of filled prompt strings to probabilities in
[0, 1] computed as a two-token softmax: P(positive) against P(negative)
at the first decoded position. Normalizing over exactly two tokens keeps
scores comparable across inputs and makes swapping the two tokens flip
the score to 1 - score.

Backends:

- ``toy:`` a deterministic, dependency-free stand-in whose logits count
  whole-word occurrences of the output tokens in the prompt. It exists so
  protocol plumbing and experiments run without weights; it is not a
  trained ranker.
- ``hf:<name-or-path>`` a transformers seq2seq checkpoint (monoT5-style).
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Sequence

log = logging.getLogger("sidecar")


@dataclass(frozen=True)
class PromptTemplate:
    template: str = "Query: {query} Document: {document} Relevant:"
    positive_token: str = "true"
    negative_token: str = "false"

    def __post_init__(self):
        for slot in ("{query}", "{document}"):
            if self.template.count(slot) != 1:
                raise ValueError(f"template must contain {slot} exactly once")
        if not self.positive_token or not self.negative_token:
            raise ValueError("output tokens must be non-empty")
        if self.positive_token == self.negative_token:
            raise ValueError("positive and negative output tokens must differ")

    def fill(self, query: str, document: str) -> str:
        return self.template.replace("{query}", query).replace("{document}", document)

    def swapped(self) -> "PromptTemplate":
        return PromptTemplate(self.template, self.negative_token, self.positive_token)


def _word_counter(token: str) -> re.Pattern:
    return re.compile(rf"(?<![0-9A-Za-z]){re.escape(token.lower())}(?![0-9A-Za-z])")


class ToyRelevanceModel:
    """Deterministic surrogate: logit(token) = weight * count(token in prompt)."""

    name = "toy"

    def __init__(self, template: PromptTemplate, weight: float = 0.7, max_words: int = 512):
        self.template = template
        self.weight = weight
        self.max_words = max_words
        self._pos = _word_counter(template.positive_token)
        self._neg = _word_counter(template.negative_token)
        self.truncations = 0

    def _truncate(self, prompt: str) -> str:
        words = prompt.split()
        if len(words) <= self.max_words:
            return prompt
        self.truncations += 1
        log.warning("truncating prompt from %d to %d words", len(words), self.max_words)
        return " ".join(words[: self.max_words])

    def score_prompts(self, prompts: Sequence[str]) -> list[float]:
        scores = []
        for prompt in prompts:
            text = self._truncate(prompt).lower()
            logit = self.weight * (len(self._pos.findall(text)) - len(self._neg.findall(text)))
            scores.append(1.0 / (1.0 + math.exp(-logit)))
        return scores


class HFSeq2SeqModel:
    """monoT5-style scoring with a transformers seq2seq checkpoint.

    The tokenizer and model are injectable so the scoring math is testable
    without downloading weights; ``from_pretrained`` wires real ones.
    """

    name = "hf"

    def __init__(self, tokenizer, model, template: PromptTemplate,
                 max_length: int = 512, device: str = "cpu"):
        import torch

        self._torch = torch
        self.template = template
        self.tokenizer = tokenizer
        self.model = model.to(device).eval()
        self.max_length = max_length
        self.device = device
        self.truncations = 0
        self.pos_id = self._single_token_id(template.positive_token)
        self.neg_id = self._single_token_id(template.negative_token)

    def _single_token_id(self, token: str) -> int:
        ids = self.tokenizer.encode(token, add_special_tokens=False)
        if not ids:
            raise ValueError(f"output token {token!r} tokenizes to nothing")
        return ids[0]

    @classmethod
    def from_pretrained(cls, name_or_path: str, template: PromptTemplate,
                        max_length: int = 512, device: str = "cpu") -> "HFSeq2SeqModel":
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        model = AutoModelForSeq2SeqLM.from_pretrained(name_or_path)
        obj = cls(tokenizer, model, template, max_length, device)
        obj.name = f"hf:{name_or_path}"
        return obj

    def score_prompts(self, prompts: Sequence[str]) -> list[float]:
        torch = self._torch
        with torch.no_grad():
            enc = self.tokenizer(
                list(prompts), return_tensors="pt", padding=True,
                truncation=True, max_length=self.max_length,
            )
            full = self.tokenizer(list(prompts), truncation=False)["input_ids"]
            overlong = sum(1 for ids in full if len(ids) > self.max_length)
            if overlong:
                self.truncations += overlong
                log.warning("truncated %d overlong inputs to %d tokens", overlong, self.max_length)
            start_id = self.model.config.decoder_start_token_id
            decoder_input = torch.full((len(prompts), 1), start_id, dtype=torch.long)
            logits = self.model(
                input_ids=enc["input_ids"].to(self.device),
                attention_mask=enc["attention_mask"].to(self.device),
                decoder_input_ids=decoder_input.to(self.device),
            ).logits[:, 0, :]
            pair = logits[:, [self.pos_id, self.neg_id]]
            probs = self._torch.softmax(pair.float(), dim=1)[:, 0]
            return [float(p) for p in probs]


def load_model(descriptor: str, template: PromptTemplate, max_length: int = 512,
               device: str = "cpu"):
    """Build a model from a descriptor: ``toy:`` or ``hf:<name-or-path>``."""
    kind, _, rest = descriptor.partition(":")
    if kind == "toy":
        return ToyRelevanceModel(template, max_words=max_length)
    if kind == "hf":
        if not rest:
            raise ValueError("hf: descriptor needs a model name or path")
        return HFSeq2SeqModel.from_pretrained(rest, template, max_length, device)
    raise ValueError(f"unknown model descriptor {descriptor!r} (expected toy: or hf:...)")
