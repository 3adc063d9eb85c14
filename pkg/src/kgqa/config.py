"""Run configuration: one flat key=value namespace for every pipeline stage.

Files hold ``key = value`` lines ('#' comments allowed); command-line flags
override file values, which override the defaults below. A run's identity is
the hash of the fully resolved config, embedded in output manifests and used
to key the preprocessing cache.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import get_type_hints

from .io_utils import config_hash
from .model.network import ModelConfig


@dataclass
class RunConfig:
    seed: int = 0

    # grounding
    max_ngram: int = 4

    # schema graphs
    max_edges: int = 3
    cap: int = 100

    # pruning
    prune: bool = True
    threshold: float = 0.15

    # triple embeddings
    kge_dim: int = 100
    kge_margin: float = 1.0
    kge_lr: float = 0.01
    kge_epochs: int = 100
    kge_batch: int = 512
    kge_neg: int = 1
    gamma: float = 2.0

    # network dims and switches
    gcn_dims: str = "100,50"
    lstm_hidden: int = 128
    d_t: int = 128
    t_hidden: int = 128
    score_hidden: int = 64
    path_attention: bool = True
    pair_attention: bool = True
    train_rel_emb: bool = True
    train_node_emb: bool = False

    # statement encoder: "toy" trains in-process, "features" reads a file
    encoder: str = "toy"
    enc_embed: int = 32
    enc_hidden: int = 64
    d_s: int = 128  # used only in features mode; toy mode uses 2*enc_hidden

    # training
    lr: float = 1e-3
    epochs: int = 10
    batch_examples: int = 16
    loss: str = "bce"  # or "listwise"
    patience: int = 3

    def model_config(self, d_s: int) -> ModelConfig:
        dims = tuple(int(x) for x in self.gcn_dims.split(",") if x.strip()) \
            if self.gcn_dims.strip() else ()
        return ModelConfig(
            d_node=self.kge_dim, gcn_dims=dims, d_rel=self.kge_dim,
            lstm_hidden=self.lstm_hidden, d_t=self.d_t, t_hidden=self.t_hidden,
            d_s=d_s, score_hidden=self.score_hidden,
            path_attention=self.path_attention,
            pair_attention=self.pair_attention,
            train_rel_emb=self.train_rel_emb,
            train_node_emb=self.train_node_emb,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def hash(self) -> str:
        return config_hash(self.to_dict())


_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


def _coerce(name: str, raw: str, target_type) -> object:
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    try:
        return target_type(raw)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {raw!r} as {target_type.__name__}") from None


def parse_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_config(file_path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults <- config file <- overrides, unknown keys rejected."""
    cfg = RunConfig()
    hints = get_type_hints(RunConfig)
    valid = {f.name for f in fields(RunConfig)}

    def apply(source: dict, where: str) -> None:
        for key, value in source.items():
            if key not in valid:
                raise ValueError(f"{where}: unknown config key {key!r}")
            if isinstance(value, str) and hints[key] is not str:
                value = _coerce(key, value, hints[key])
            setattr(cfg, key, value)

    if file_path is not None:
        apply(parse_config_file(file_path), str(file_path))
    if overrides:
        apply(overrides, "flags")
    return cfg
