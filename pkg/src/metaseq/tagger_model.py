"""The end-to-end tagger: projection -> channel stack -> multi-window CNN
-> tanh -> BiLSTM -> per-token softmax, trained with class-weighted
cross-entropy under plain SGD.

Training is batch-size-1 over seeded shuffles; after every epoch the dev
split is scored and the best-F1 parameter snapshot is kept. One training
run is single-threaded and bitwise reproducible from its seed.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable, Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from . import train_eval
from .embedding_io import ChannelStack, stack_channels
from .errors import (
    CompatibilityError,
    DimensionError,
    FormatError,
    InputError,
    ParameterError,
    TruncatedError,
)

CHECKPOINT_MAGIC = b"MSEQ"
CHECKPOINT_VERSION = 1

_INIT_STREAM = 1
_SHUFFLE_STREAM = 2
_DROPOUT_STREAM = 3


@dataclass(frozen=True)
class ModelConfig:
    unified_dim: int = 1024
    static_dim: int = 300
    window_sizes: tuple[int, ...] = (2, 3, 4, 5)
    kernels_per_window: int = 100
    hidden_size: int = 256               # per direction
    input_dropout: float = 0.5
    hidden_dropout: float = 0.1
    learning_rate: float = 0.2
    class_weights: tuple[float, float] = (1.0, 2.0)   # (literal, metaphor)
    channel_order: tuple[str, ...] = ("G", "E", "B")
    epochs: int = 30
    seed: int = 0
    use_pos: bool = False
    use_abstractness: bool = False
    pos_tags: tuple[str, ...] = ()
    lowercase_lexicon: bool = True

    def __post_init__(self):
        if min(self.unified_dim, self.static_dim, self.kernels_per_window,
               self.hidden_size, self.epochs) < 1:
            raise ParameterError("all model sizes and the epoch count must be positive")
        if not self.window_sizes or min(self.window_sizes) < 1:
            raise ParameterError(f"bad window sizes {self.window_sizes}")
        for rate in (self.input_dropout, self.hidden_dropout):
            if not 0.0 <= rate < 1.0:
                raise ParameterError(f"dropout rate {rate} outside [0, 1)")
        if min(self.class_weights) <= 0.0:
            raise ParameterError(f"class weights must be positive, got {self.class_weights}")
        if not self.channel_order:
            raise ParameterError("channel order must name at least one channel")
        if self.use_pos and not self.pos_tags:
            raise ParameterError("use_pos requires pos_tags")

    @property
    def feature_width(self) -> int:
        return self.kernels_per_window * len(self.window_sizes)

    @property
    def static_input_dim(self) -> int:
        width = self.static_dim
        if self.use_pos:
            width += len(self.pos_tags) + 1   # +1 for the UNK slot
        if self.use_abstractness:
            width += 1
        return width

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        kwargs = dict(data)
        for key in ("window_sizes", "class_weights", "channel_order", "pos_tags"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    epoch: int
    dev_f1: float


def _glorot(rng: tc.RngStream, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


class MetaphorTagger:
    """Trainable tagger; parameters live in a flat name -> Tensor map."""

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray] | None = None):
        self.config = config
        if params is not None:
            self.params = {name: tc.Tensor(arr, requires_grad=True)
                           for name, arr in params.items()}
            self._check_param_shapes()
        else:
            self.params = self._init_params(tc.RngStream(config.seed, _INIT_STREAM))

    def _expected_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.config
        c = len(cfg.channel_order)
        d = cfg.unified_dim
        feat = cfg.feature_width
        hidden = cfg.hidden_size
        shapes: dict[str, tuple[int, ...]] = {}
        if "G" in cfg.channel_order:
            shapes["proj_w"] = (d, cfg.static_input_dim)
            shapes["proj_b"] = (d,)
        for w in cfg.window_sizes:
            shapes[f"conv_w{w}"] = (cfg.kernels_per_window, c, w, d)
        for direction in ("f", "b"):
            shapes[f"lstm_{direction}_wx"] = (feat, 4 * hidden)
            shapes[f"lstm_{direction}_wh"] = (hidden, 4 * hidden)
            shapes[f"lstm_{direction}_b"] = (4 * hidden,)
        shapes["cls_w"] = (2 * hidden, 2)
        shapes["cls_b"] = (2,)
        return shapes

    def _init_params(self, rng: tc.RngStream) -> dict[str, tc.Tensor]:
        cfg = self.config
        hidden = cfg.hidden_size
        params: dict[str, tc.Tensor] = {}
        for name, shape in self._expected_shapes().items():
            if name.endswith("_b"):
                data = np.zeros(shape)
                if name.startswith("lstm_"):
                    data[hidden:2 * hidden] = 1.0   # forget gate opens at init
            elif name.startswith("conv_w"):
                fan_in = int(np.prod(shape[1:]))
                data = _glorot(rng, shape, fan_in, cfg.kernels_per_window)
            else:
                data = _glorot(rng, shape, shape[0], shape[-1])
            params[name] = tc.Tensor(data, requires_grad=True)
        return params

    def _check_param_shapes(self) -> None:
        expected = self._expected_shapes()
        if set(expected) != set(self.params):
            raise CompatibilityError(
                f"parameter names {sorted(self.params)} do not match "
                f"configuration ({sorted(expected)})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise CompatibilityError(
                    f"parameter {name}: stored shape {self.params[name].shape}, "
                    f"configuration implies {shape}")

    def parameters(self) -> dict[str, tc.Tensor]:
        return self.params

    def export_params(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    # -- forward ------------------------------------------------------------

    def build_stack(self, channels: Mapping[str, np.ndarray]) -> ChannelStack:
        """Project the static channel and stack all channels in config order."""
        cfg = self.config
        mats = []
        for name in cfg.channel_order:
            if name not in channels:
                raise DimensionError(f"channel {name} missing from input")
            raw = channels[name]
            if name == "G":
                raw = np.asarray(raw, dtype=np.float64)
                if raw.ndim != 2 or raw.shape[1] != cfg.static_input_dim:
                    raise DimensionError(
                        f"static channel shape {raw.shape}, expected "
                        f"(n, {cfg.static_input_dim})")
                projected = tc.add_bias(
                    tc.matmul(tc.Tensor(raw), tc.transpose(self.params["proj_w"])),
                    self.params["proj_b"])
                mats.append(projected)
            else:
                mat = np.asarray(raw, dtype=np.float64)
                if mat.ndim != 2 or mat.shape[1] != cfg.unified_dim:
                    raise DimensionError(
                        f"channel {name} shape {mat.shape}, expected (n, {cfg.unified_dim})")
                mats.append(tc.Tensor(mat))
        return stack_channels(mats, cfg.channel_order)

    def _lstm_direction(self, act: tc.Tensor, prefix: str, reverse: bool) -> list[tc.Tensor]:
        hidden = self.config.hidden_size
        wx = self.params[f"{prefix}_wx"]
        wh = self.params[f"{prefix}_wh"]
        bias = self.params[f"{prefix}_b"]
        n = act.shape[0]
        h = tc.Tensor(np.zeros((1, hidden)))
        c = tc.Tensor(np.zeros((1, hidden)))
        outs: list[tc.Tensor | None] = [None] * n
        steps = range(n - 1, -1, -1) if reverse else range(n)
        for t in steps:
            x = tc.row(act, t)
            z = tc.add_bias(tc.add(tc.matmul(x, wx), tc.matmul(h, wh)), bias)
            gate_in = tc.sigmoid(tc.slice_cols(z, 0, hidden))
            gate_forget = tc.sigmoid(tc.slice_cols(z, hidden, 2 * hidden))
            candidate = tc.tanh_act(tc.slice_cols(z, 2 * hidden, 3 * hidden))
            gate_out = tc.sigmoid(tc.slice_cols(z, 3 * hidden, 4 * hidden))
            c = tc.add(tc.mul(gate_forget, c), tc.mul(gate_in, candidate))
            h = tc.mul(gate_out, tc.tanh_act(c))
            outs[t] = h
        return outs

    def forward(self, stack: ChannelStack, rng: tc.RngStream, training: bool) -> tc.Tensor:
        """Per-token class probabilities, shape (n, 2)."""
        cfg = self.config
        if stack.dimension != cfg.unified_dim or stack.channels != len(cfg.channel_order):
            raise DimensionError(
                f"stack shape {stack.tensor.shape} does not fit "
                f"{len(cfg.channel_order)} channels of dimension {cfg.unified_dim}")
        block = tc.dropout(stack.tensor, cfg.input_dropout, rng, training)
        maps = [tc.conv_bank(block, self.params[f"conv_w{w}"]) for w in cfg.window_sizes]
        feats = tc.tanh_act(tc.concat_cols(maps))
        fwd = self._lstm_direction(feats, "lstm_f", reverse=False)
        bwd = self._lstm_direction(feats, "lstm_b", reverse=True)
        hidden = tc.stack_rows([tc.concat_cols([fwd[t], bwd[t]])
                                for t in range(stack.length)])
        hidden = tc.dropout(hidden, cfg.hidden_dropout, rng, training)
        logits = tc.add_bias(tc.matmul(hidden, self.params["cls_w"]), self.params["cls_b"])
        return tc.softmax(logits)

    def sentence_loss(self, stack: ChannelStack, labels: Sequence[int],
                      rng: tc.RngStream, training: bool = True,
                      mask: Sequence[bool] | None = None) -> tc.Tensor:
        probs = self.forward(stack, rng, training)
        return tc.weighted_cross_entropy(probs, labels, self.config.class_weights, mask)

    def predict_probs(self, channels: Mapping[str, np.ndarray]) -> np.ndarray:
        """Inference probabilities (n, 2); no tape, no dropout."""
        stack = self.build_stack(channels)
        rng = tc.RngStream(0)  # unused: dropout is inactive outside training
        return self.forward(stack, rng, training=False).data.copy()

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "MetaphorTagger":
        return cls(checkpoint.config, params=checkpoint.params)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _score(model: MetaphorTagger, sentences, channel_list) -> train_eval.MetricsReport:
    preds, gold, masks = [], [], []
    for sent, channels in zip(sentences, channel_list):
        probs = model.predict_probs(channels)
        preds.extend(np.argmax(probs, axis=1).tolist())
        gold.extend(sent.labels().tolist())
        masks.extend(sent.target_mask().tolist())
    return train_eval.compute_metrics(preds, gold, masks)


def train(train_sentences, provider, config: ModelConfig,
          dev_sentences=None, dev_provider=None,
          on_epoch: Callable[[int, float, float], None] | None = None,
          stop_at_f1: float | None = None) -> Checkpoint:
    """Seeded SGD over shuffled sentences; returns the best-dev-F1 snapshot.

    Every token contributes to the loss (non-targets train as literal);
    scoring for model selection uses target tokens only. With no dev split
    the training sentences double as the dev set.
    """
    train_sentences = list(train_sentences)
    if not train_sentences:
        raise InputError("empty training dataset")
    train_channels = [provider.channels(s, i) for i, s in enumerate(train_sentences)]
    if dev_sentences is None:
        dev_sentences, dev_channels = train_sentences, train_channels
    else:
        dev_sentences = list(dev_sentences)
        dev_channels = [(dev_provider or provider).channels(s, i)
                        for i, s in enumerate(dev_sentences)]

    model = MetaphorTagger(config)
    shuffle_rng = tc.RngStream(config.seed, _SHUFFLE_STREAM)
    dropout_rng = tc.RngStream(config.seed, _DROPOUT_STREAM)
    params = model.parameters()

    best: Checkpoint | None = None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_sentences))
        total_loss = 0.0
        for idx in order:
            with tc.Tape() as tape:
                stack = model.build_stack(train_channels[idx])
                loss = model.sentence_loss(stack, train_sentences[idx].labels(),
                                           dropout_rng, training=True)
            tc.backward(loss, tape, params.values())
            tc.sgd_step(params, config.learning_rate)
            total_loss += float(loss.data)
        dev_f1 = _score(model, dev_sentences, dev_channels).f1
        if on_epoch is not None:
            on_epoch(epoch, total_loss / len(train_sentences), dev_f1)
        if best is None or dev_f1 > best.dev_f1:
            best = Checkpoint(config, model.export_params(), epoch, dev_f1)
        if stop_at_f1 is not None and dev_f1 >= stop_at_f1:
            break
    return best


def predict(checkpoint: Checkpoint,
            channels: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Labels (argmax) and class probabilities for one sentence."""
    model = MetaphorTagger.from_checkpoint(checkpoint)
    probs = model.predict_probs(channels)
    return np.argmax(probs, axis=1), probs


# ---------------------------------------------------------------------------
# Checkpoint codec
# ---------------------------------------------------------------------------

def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    blob = json.dumps(
        {"config": checkpoint.config.to_dict(),
         "epoch": checkpoint.epoch,
         "dev_f1": checkpoint.dev_f1},
        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name in sorted(checkpoint.params):
            arr = np.ascontiguousarray(checkpoint.params[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedError(f"checkpoint ended while reading {what}")
    return data


def load_checkpoint(path, expected_dim: int | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, blob_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        meta = json.loads(_read_exact(fh, blob_len, "config blob").decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedError("checkpoint ended inside a parameter header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "parameter rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "parameter dims"))
            count = int(np.prod(shape)) if rank else 1
            payload = _read_exact(fh, 8 * count, f"parameter {name} payload")
            params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if expected_dim is not None and config.unified_dim != expected_dim:
        raise CompatibilityError(
            f"checkpoint dimension {config.unified_dim} != expected {expected_dim}")
    return Checkpoint(config, params, int(meta["epoch"]), float(meta["dev_f1"]))
