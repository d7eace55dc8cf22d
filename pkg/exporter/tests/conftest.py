import pathlib

import numpy as np
import pytest


class FakeEncoder:
    """Deterministic stand-in with the sentence-transformer encode API."""

    def __init__(self, d=24, seed=0):
        self.d = d
        self.seed = seed

    def encode(self, texts, batch_size=32, normalize_embeddings=True, convert_to_numpy=True):
        out = np.empty((len(texts), self.d), dtype=np.float32)
        for i, text in enumerate(texts):
            rng = np.random.default_rng(abs(hash((self.seed, text))) % (2**63))
            v = rng.normal(size=self.d)
            if normalize_embeddings:
                v = v / np.linalg.norm(v)
            out[i] = v.astype(np.float32)
        return out


@pytest.fixture
def fake_encoder():
    return FakeEncoder()


@pytest.fixture(scope="session")
def tiny_st_model(tmp_path_factory):
    """A real sentence-transformer built locally (no network, random init)."""
    torch = pytest.importorskip("torch")
    try:
        from transformers import BertConfig, BertModel, BertTokenizerFast
        from sentence_transformers import SentenceTransformer, models
    except Exception as e:  # pragma: no cover - environment without the stack
        pytest.skip(f"transformers stack unavailable: {e}")
    root = tmp_path_factory.mktemp("tiny_st")
    vocab = root / "vocab.txt"
    tokens = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + [chr(c) for c in range(ord("a"), ord("z") + 1)]
        + [f"##{chr(c)}" for c in range(ord("a"), ord("z") + 1)]
        + list("0123456789,._ ")
    )
    vocab.write_text("\n".join(tokens))
    torch.manual_seed(0)
    cfg = BertConfig(
        vocab_size=len(tokens),
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    hf_dir = root / "hf"
    BertModel(cfg).save_pretrained(hf_dir)
    BertTokenizerFast(vocab_file=str(vocab), do_lower_case=True).save_pretrained(hf_dir)
    word = models.Transformer(str(hf_dir), max_seq_length=64)
    get_dim = getattr(word, "get_embedding_dimension", None) or word.get_word_embedding_dimension
    pool = models.Pooling(get_dim(), pooling_mode="mean")
    st_dir = root / "st"
    SentenceTransformer(modules=[word, pool], device="cpu").save(str(st_dir))
    return str(st_dir)


@pytest.fixture
def schema_dir(tmp_path):
    import json

    schemas = {
        "alpha.json": {
            "table_id": "alpha",
            "columns": [
                {"name": "id", "data_type": "int", "kind": "numerical"},
                {"name": "age", "data_type": "int", "kind": "numerical", "comment": "user age in years"},
            ],
        },
        "beta.json": {
            "table_id": "beta",
            "columns": [
                {"name": "id", "data_type": "int", "kind": "numerical"},
                {"name": "city", "data_type": "varchar", "kind": "categorical"},
            ],
        },
    }
    for name, schema in schemas.items():
        (tmp_path / name).write_text(json.dumps(schema), encoding="utf-8")
    return tmp_path
