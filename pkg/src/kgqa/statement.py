"""Statement vectors: a small trainable encoder, or precomputed feature files.

The toy encoder embeds the token sequence "question [sep] answer" and runs a
bidirectional LSTM; the statement vector concatenates the forward direction's
final hidden state with the backward direction's final hidden state, giving
d_s = 2 * hidden. Feature mode looks vectors up from a file keyed by
(example id, candidate index), for plugging in any external encoder.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io_utils
from .ground import tokenize
from .model.layers import BiLSTM, Layer

SEP = "<sep>"
UNK = "<unk>"


def build_vocab(texts) -> dict[str, int]:
    """Token -> id over all texts; ids 0/1 reserved for the separator/unknown."""
    seen = set()
    for text in texts:
        seen.update(tokenize(text))
    vocab = {SEP: 0, UNK: 1}
    for tok in sorted(seen):
        vocab[tok] = len(vocab)
    return vocab


class ToyStatementEncoder(Layer):
    def __init__(self, vocab: dict[str, int], d_embed: int, d_hidden: int,
                 rng: np.random.Generator) -> None:
        super().__init__()
        self.vocab = vocab
        self.d_hidden = d_hidden
        self.emb = self._register(
            "emb", rng.standard_normal((len(vocab), d_embed)) * 0.1)
        self.lstm = BiLSTM(rng, d_embed, d_hidden)
        self._adopt("lstm", self.lstm)

    @property
    def d_s(self) -> int:
        return 2 * self.d_hidden

    def token_ids(self, question: str, answer: str) -> np.ndarray:
        toks = tokenize(question) + [SEP] + tokenize(answer)
        unk = self.vocab[UNK]
        return np.asarray([self.vocab.get(t, unk) for t in toks], dtype=np.int64)

    def forward(self, ids: np.ndarray) -> tuple[np.ndarray, tuple]:
        x = self.emb[ids][None, :, :]           # (1, T, d_embed)
        y, cache = self.lstm.forward(x)
        T = len(ids)
        H = self.d_hidden
        s = np.concatenate([y[0, T - 1, :H], y[0, 0, H:]])
        return s, (ids, cache, T)

    def backward(self, ds: np.ndarray, cache: tuple) -> None:
        ids, lstm_cache, T = cache
        H = self.d_hidden
        dy = np.zeros((1, T, 2 * H))
        dy[0, T - 1, :H] = ds[:H]
        dy[0, 0, H:] = ds[H:]
        dx = self.lstm.backward(dy, lstm_cache)
        np.add.at(self._grads["emb"], ids, dx[0])

    def encode(self, question: str, answer: str) -> np.ndarray:
        s, _ = self.forward(self.token_ids(question, answer))
        return s

    def save_extra_meta(self) -> dict:
        return {"vocab": self.vocab, "d_embed": int(self.emb.shape[1]),
                "d_hidden": self.d_hidden}


class FeatureStore:
    """Read-only statement vectors keyed by (example id, candidate index)."""

    def __init__(self, keys: dict[tuple[str, int], int], rows: np.ndarray) -> None:
        self._keys = keys
        self._rows = rows

    @property
    def dim(self) -> int:
        return self._rows.shape[1]

    def get(self, example_id: str, cand_index: int) -> np.ndarray:
        try:
            return self._rows[self._keys[(example_id, cand_index)]].astype(np.float64)
        except KeyError:
            raise KeyError(
                f"no statement feature for key ({example_id!r}, {cand_index})") from None

    @classmethod
    def load(cls, path) -> "FeatureStore":
        path = Path(path)
        if path.suffix == ".jsonl":
            return cls._load_jsonl(path)
        meta, blocks = io_utils.read_container(path, kind="features")
        keys = {}
        for pos, key in enumerate(meta["keys"]):
            ex_id, idx = key.rsplit("#", 1)
            keys[(ex_id, int(idx))] = pos
        return cls(keys, blocks["rows"])

    @classmethod
    def _load_jsonl(cls, path: Path) -> "FeatureStore":
        import json
        keys = {}
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key = (str(obj["id"]), int(obj["candidate"]))
                    vec = np.asarray(obj["vector"], dtype=np.float64)
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad feature row: {exc}") from None
                keys[key] = len(rows)
                rows.append(vec)
        if not rows:
            raise ValueError(f"{path}: no feature rows")
        return cls(keys, np.vstack(rows))

    @staticmethod
    def write(path, entries: dict[tuple[str, int], np.ndarray]) -> None:
        """Binary layout: sorted key list in the header, float32 rows block."""
        items = sorted(entries.items())
        keys = [f"{ex_id}#{idx}" for (ex_id, idx), _ in items]
        rows = np.vstack([vec for _, vec in items]).astype(np.float32)
        io_utils.write_container(
            path, "features",
            {"keys": keys, "dim": int(rows.shape[1])},
            {"rows": rows})
