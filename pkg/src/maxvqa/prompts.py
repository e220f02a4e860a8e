"""Per-axis positive/negative prompts with one learnable context token.

Every prompt has the form ``"A " + Ctx + " " + template``. The context token
starts as the literal word "X"; during training only its embedding moves,
and by default a single embedding is shared by all 32 prompts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .dimensions import DimensionSpec, Perspective, registry

CTX_LITERAL = "X"
PREFIX = "A"
POLARITIES = ("positive", "negative")


def build_initial(spec: DimensionSpec) -> tuple[str, str]:
    """Initial templates; aesthetic factors (not the abstract A-all) also name the axis."""
    if spec.perspective is Perspective.AESTHETIC and not spec.is_abstract:
        return (f"{spec.positive_desc} {spec.name} photo.", f"{spec.negative_desc} {spec.name} photo.")
    return (f"{spec.positive_desc} photo.", f"{spec.negative_desc} photo.")


@dataclass(frozen=True)
class PromptPair:
    axis_code: str
    positive_template: str
    negative_template: str
    context_slot: int | None = None
    tokenized_pos: tuple[int, ...] = field(default=(), repr=False)
    tokenized_neg: tuple[int, ...] = field(default=(), repr=False)

    @property
    def positive_text(self) -> str:
        return render(self.positive_template)

    @property
    def negative_text(self) -> str:
        return render(self.negative_template)


def render(template: str, ctx: str = CTX_LITERAL) -> str:
    return f"{PREFIX} {ctx} {template}"


def context_slot(tokenizer) -> int:
    """Position of the context token in any tokenized prompt."""
    ids = tokenizer.encode(f"{PREFIX} {CTX_LITERAL}")
    return ids.index(tokenizer.token_id(CTX_LITERAL))


def contextualize(templates: tuple[str, str], axis_code: str, tokenizer=None) -> PromptPair:
    pos, neg = templates
    if tokenizer is None:
        return PromptPair(axis_code, pos, neg)
    slot = context_slot(tokenizer)
    pos_ids, neg_ids = tokenizer.encode(render(pos)), tokenizer.encode(render(neg))
    ctx_id = tokenizer.token_id(CTX_LITERAL)
    if pos_ids[slot] != ctx_id or neg_ids[slot] != ctx_id:
        raise ValueError(f"context token not at slot {slot} for axis {axis_code}")
    return PromptPair(axis_code, pos, neg, slot, tuple(pos_ids), tuple(neg_ids))


def all_pairs(tokenizer=None) -> list[PromptPair]:
    return [contextualize(build_initial(spec), spec.code, tokenizer) for spec in registry()]


def prompt_strings() -> list[str]:
    """The 32 prompt texts in table order, positive before negative."""
    return [text for p in all_pairs() for text in (p.positive_text, p.negative_text)]


class PromptLearner(nn.Module):
    """Token ids for all prompts plus the trainable context embedding(s).

    ``ids`` has shape (axes, 2, L). ``ctx`` has shape (1, width) when shared or
    (axes, width) in per-axis mode. The forward pass substitutes ``ctx`` at the
    context slot of the frozen token embeddings and runs the text tower.
    """

    def __init__(self, encoder, per_axis_context: bool = False, pairs: list[PromptPair] | None = None):
        super().__init__()
        pairs = pairs or all_pairs(encoder.tokenizer)
        self.axis_codes = [p.axis_code for p in pairs]
        ids = torch.tensor([[p.tokenized_pos, p.tokenized_neg] for p in pairs], dtype=torch.long)
        self.register_buffer("ids", ids)
        self.slot = pairs[0].context_slot
        ctx_id = encoder.tokenizer.token_id(CTX_LITERAL)
        with torch.no_grad():
            init = encoder.text.embed_tokens(torch.tensor([ctx_id]))
        n = len(pairs) if per_axis_context else 1
        self.ctx = nn.Parameter(init.detach().clone().repeat(n, 1))
        self.per_axis_context = per_axis_context

    def token_embeddings(self, text_tower) -> torch.Tensor:
        a, p, length = self.ids.shape
        with torch.no_grad():
            frozen = text_tower.embed_tokens(self.ids.reshape(a * p, length))
        frozen = frozen.reshape(a, p, length, -1)
        ctx = self.ctx.to(frozen.dtype)[:, None, :].expand(a, p, -1)
        slot_mask = torch.zeros(length, dtype=torch.bool)
        slot_mask[self.slot] = True
        return torch.where(slot_mask[None, None, :, None], ctx[:, :, None, :], frozen)

    def forward(self, text_tower) -> torch.Tensor:
        """Text embeddings of shape (axes, 2, d)."""
        x = self.token_embeddings(text_tower)
        a, p, length, w = x.shape
        out = text_tower(x.reshape(a * p, length, w), self.ids.reshape(a * p, length))
        return out.reshape(a, p, -1)


@torch.no_grad()
def literal_text_embeddings(encoder, pairs: list[PromptPair] | None = None) -> torch.Tensor:
    """Embeddings of the prompts with "X" as an ordinary word (zero-shot scoring)."""
    pairs = pairs or all_pairs(encoder.tokenizer)
    ids = torch.tensor([[p.tokenized_pos, p.tokenized_neg] for p in pairs], dtype=torch.long)
    a, p, length = ids.shape
    flat = ids.reshape(a * p, length)
    x = encoder.text.embed_tokens(flat).reshape(a, p, length, -1)
    out = encoder.text(x.reshape(a * p, length, -1), flat)
    return out.reshape(a, p, -1)


def export_prompts(tokenizer=None, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["axis_code", "polarity", "template", "text", "token_ids"])
    for pair in all_pairs(tokenizer):
        for polarity, template, ids in (("positive", pair.positive_template, pair.tokenized_pos),
                                        ("negative", pair.negative_template, pair.tokenized_neg)):
            token_ids = " ".join(str(i) for i in ids if i != 0)
            writer.writerow([pair.axis_code, polarity, template, render(template), token_ids])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
