import json

import pytest
import torch


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    """A randomly initialized 2-layer encoder checkpoint saved locally, so
    extraction runs without any model hub."""
    from transformers import BertConfig, BertForSequenceClassification, BertTokenizerFast

    path = tmp_path_factory.mktemp("tiny_bert")
    vocab = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + [chr(c) for c in range(97, 123)]
        + ["##" + chr(c) for c in range(97, 123)]
        + ["the", "sun", "moon", "star", "orbit", "dough", "bake"]
    )
    (path / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab_file=str(path / "vocab.txt"), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=48,
        num_labels=2,
    )
    torch.manual_seed(1234)
    model = BertForSequenceClassification(config)
    tokenizer.save_pretrained(str(path))
    model.save_pretrained(str(path))
    return str(path)


@pytest.fixture(scope="session")
def tiny_gpt2(tmp_path_factory):
    """Decoder checkpoint with fused qkv attention: no value-projection
    linears for the adapter source to find."""
    from transformers import GPT2Config, GPT2LMHeadModel, GPT2TokenizerFast

    path = tmp_path_factory.mktemp("tiny_gpt2")
    config = GPT2Config(
        vocab_size=80, n_positions=32, n_embd=16, n_layer=1, n_head=2
    )
    torch.manual_seed(1234)
    model = GPT2LMHeadModel(config)
    model.save_pretrained(str(path))
    vocab = {f"tok{i}": i for i in range(78)}
    vocab["<|endoftext|>"] = 78
    vocab["!"] = 79
    (path / "vocab.json").write_text(json.dumps(vocab), encoding="utf-8")
    (path / "merges.txt").write_text("#version: 0.2\n", encoding="utf-8")
    tokenizer = GPT2TokenizerFast(
        vocab_file=str(path / "vocab.json"), merges_file=str(path / "merges.txt")
    )
    tokenizer.save_pretrained(str(path))
    return str(path)


@pytest.fixture()
def pool_file(tmp_path):
    records = [
        {"id": "p0", "task": "astro", "split": "train",
         "input_text": "the sun and the moon", "output_text": "1", "label": 1},
        {"id": "p1", "task": "astro", "split": "train",
         "input_text": "a star in orbit", "output_text": "0", "label": 0},
        {"id": "p2", "task": "cook", "split": "train",
         "input_text": "bake the dough", "output_text": "1", "label": 1},
        {"id": "p3", "task": "cook", "split": "train",
         "input_text": "the sun and the moon", "output_text": "0", "label": 0},
    ]
    path = tmp_path / "pool.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path
