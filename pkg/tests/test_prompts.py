from pathlib import Path

import pytest
import torch

from maxvqa.dimensions import lookup, registry
from maxvqa.evaluator import MaxVQA
from maxvqa.prompts import (PromptLearner, all_pairs, build_initial, contextualize, export_prompts,
                            literal_text_embeddings, prompt_strings)

GOLDEN = Path(__file__).parent / "data" / "prompts_golden.txt"


@pytest.mark.parametrize("code,expected", [
    ("T-1", ("Sharp photo.", "Fuzzy photo.")),
    ("A-3", ("Vibrant Color photo.", "Faded Color photo.")),
    ("O", ("High Quality photo.", "Low Quality photo.")),
    ("A-all", ("Good Aesthetics photo.", "Bad Aesthetics photo.")),
    ("A-5", ("Consistent Trajectory photo.", "Incoherent Trajectory photo.")),
])
def test_build_initial(code, expected):
    assert build_initial(lookup(code)) == expected


def test_contextualized_text():
    pair = contextualize(build_initial(lookup("T-1")), "T-1")
    assert pair.positive_text == "A X Sharp photo."
    assert pair.negative_text == "A X Fuzzy photo."


def test_golden_prompt_set():
    assert "\n".join(prompt_strings()) + "\n" == GOLDEN.read_text(encoding="utf-8")


def test_all_pairs(encoder):
    pairs = all_pairs(encoder.tokenizer)
    assert [p.axis_code for p in pairs] == [s.code for s in registry()]
    assert len({p.context_slot for p in pairs}) == 1
    ctx = encoder.tokenizer.token_id("X")
    for p in pairs:
        assert p.tokenized_pos[p.context_slot] == ctx == p.tokenized_neg[p.context_slot]
        assert p.tokenized_pos != p.tokenized_neg
    seqs = [p.tokenized_pos for p in pairs] + [p.tokenized_neg for p in pairs]
    assert len(set(seqs)) == 32


def test_detokenize_reproduces_templates(encoder):
    tok = encoder.tokenizer
    for p in all_pairs(tok):
        assert tok.decode(p.tokenized_pos) == p.positive_text
        assert tok.decode(p.tokenized_neg) == p.negative_text


def test_shared_context_parameter(encoder):
    learner = PromptLearner(encoder)
    assert learner.ctx.shape[0] == 1
    params = [n for n, p in learner.named_parameters()]
    assert params == ["ctx"]


def test_per_axis_context_flag(encoder):
    learner = PromptLearner(encoder, per_axis_context=True)
    assert learner.ctx.shape[0] == 16


def test_initial_context_equals_literal(encoder):
    learner = PromptLearner(encoder)
    with torch.no_grad():
        assert torch.equal(learner(encoder.text), literal_text_embeddings(encoder))


def test_context_substitution_leaves_text(encoder):
    learner = PromptLearner(encoder)
    before = learner.ids.clone()
    with torch.no_grad():
        learner.ctx.add_(1.0)
    assert torch.equal(learner.ids, before)
    assert encoder.tokenizer.decode(learner.ids[0, 0]) == "A X Sharp photo."


def test_training_step_touches_only_context(encoder):
    model = MaxVQA(encoder, fragment_dim=4, dropout=0.0)
    table_before = encoder.text.token_embedding.weight.clone()
    ctx_before = model.prompts.ctx.detach().clone()
    emb_before = model.prompts.token_embeddings(encoder.text).detach().clone()
    opt = torch.optim.SGD([model.prompts.ctx], lr=0.5)
    loss = model.text_embeddings()[:, 0].sum()
    loss.backward()
    opt.step()
    emb_after = model.prompts.token_embeddings(encoder.text).detach()
    changed = (emb_after != emb_before).any(dim=-1)  # (A, 2, L)
    slot = model.prompts.slot
    assert changed[:, :, slot].all()
    changed[:, :, slot] = False
    assert not changed.any()
    # the same new vector sits in every prompt's slot
    delta = emb_after[:, :, slot] - ctx_before
    assert torch.equal(delta, delta[:1, :1].expand_as(delta))
    assert torch.equal(encoder.text.token_embedding.weight, table_before)


def test_export_prompts(encoder, tmp_path):
    text = export_prompts(encoder.tokenizer, tmp_path / "p.tsv")
    lines = text.splitlines()
    assert lines[0] == "axis_code\tpolarity\ttemplate\ttext\ttoken_ids"
    assert len(lines) == 33
    assert lines[1].startswith("T-1\tpositive\tSharp photo.\tA X Sharp photo.\t")
