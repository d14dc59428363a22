"""GRU-TCN multi-task classifier and its training loop.

The 32-channel axis is treated as a sequence (T=32) with the 10 band
powers as step features. Two stacked GRU layers encode the sequence, a
two-block dilated TCN refines it, global average pooling yields a 64-D
embedding, and a per-task head maps to probabilities. One independent
model is trained per task.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dsp import SegmentFeatures
from .evalstats import PredictionRecord, macro_f1

TASKS = ("stroke_type", "lateralization", "severity")

#: Class orderings per task; index order fixes the probability layout.
TASK_CLASSES = {
    "stroke_type": ("healthy", "ischemic", "hemorrhagic"),
    "lateralization": ("left", "right"),
    "severity": ("large", "small"),
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    input_dim: int = 10
    hidden: int = 64
    tcn_kernel: int = 3
    tcn_dilations: tuple = (1, 2)

    def n_outputs(self, task: str) -> int:
        return 3 if task == "stroke_type" else 1


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 20
    max_epochs: int = 300
    seed: int = 0


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)   # epoch, train_loss, val_macro_f1
    best_epoch: int = -1
    best_val_macro_f1: float = -1.0

    def to_csv(self, path: str | Path) -> None:
        lines = ["epoch,train_loss,val_macro_f1"]
        lines += [f"{r['epoch']},{r['train_loss']:.6f},{r['val_macro_f1']:.6f}"
                  for r in self.rows]
        Path(path).write_text("\n".join(lines) + "\n")


def init_params(task: str, cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for every tensor."""
    rng = np.random.default_rng(seed)
    h = cfg.hidden
    params: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for layer, in_dim in (("gru1", cfg.input_dim), ("gru2", h)):
        for gate in ("z", "r", "h"):
            params[f"{layer}.W{gate}"] = uniform((in_dim, h), in_dim)
            params[f"{layer}.U{gate}"] = uniform((h, h), h)
            params[f"{layer}.b{gate}"] = uniform((h,), in_dim)
    for i, _d in enumerate(cfg.tcn_dilations):
        fan = h * cfg.tcn_kernel
        params[f"tcn{i}.conv1_w"] = uniform((h, h, cfg.tcn_kernel), fan)
        params[f"tcn{i}.conv1_b"] = uniform((h,), fan)
        params[f"tcn{i}.conv2_w"] = uniform((h, h, cfg.tcn_kernel), fan)
        params[f"tcn{i}.conv2_b"] = uniform((h,), fan)
    n_out = cfg.n_outputs(task)
    params["head.W"] = uniform((h, n_out), h)
    params["head.b"] = uniform((n_out,), h)
    return params


def _gru_layer(x_seq: list[ad.Tensor], p: dict[str, ad.Tensor], prefix: str,
               hidden: int, batch: int) -> list[ad.Tensor]:
    h = ad.Tensor(np.zeros((batch, hidden)))
    states = []
    for x_t in x_seq:
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, p[f"{prefix}.Wz"]),
                                     ad.matmul(h, p[f"{prefix}.Uz"])), p[f"{prefix}.bz"]))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, p[f"{prefix}.Wr"]),
                                     ad.matmul(h, p[f"{prefix}.Ur"])), p[f"{prefix}.br"]))
        h_cand = ad.tanh(ad.add(ad.add(ad.matmul(x_t, p[f"{prefix}.Wh"]),
                                       ad.matmul(ad.mul(r, h), p[f"{prefix}.Uh"])),
                         p[f"{prefix}.bh"]))
        one_minus_z = ad.add(ad.neg(z), 1.0)
        h = ad.add(ad.mul(one_minus_z, h), ad.mul(z, h_cand))
        states.append(h)
    return states


def _tcn_block(x: ad.Tensor, p: dict[str, ad.Tensor], prefix: str,
               dilation: int) -> ad.Tensor:
    c1 = ad.relu(ad.dilated_conv1d(x, p[f"{prefix}.conv1_w"], p[f"{prefix}.conv1_b"],
                                   dilation=dilation, padding="same"))
    c2 = ad.dilated_conv1d(c1, p[f"{prefix}.conv2_w"], p[f"{prefix}.conv2_b"],
                           dilation=dilation, padding="same")
    return ad.relu(ad.add(c2, x))


def forward(features: np.ndarray, params: dict[str, ad.Tensor] | dict[str, np.ndarray],
            task: str, cfg: ModelConfig | None = None,
            return_graph: bool = False):
    """Run the model on a (batch, T, bands) array.

    Returns (embedding, probs) as numpy arrays, or as graph tensors
    (embedding, logits) when return_graph is set for training.
    """
    cfg = cfg or ModelConfig()
    p = {k: (v if isinstance(v, ad.Tensor) else ad.Tensor(v))
         for k, v in params.items()}
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    batch, seq_len, in_dim = x.shape
    if in_dim != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim} features per step, got {in_dim}")
    xt = ad.Tensor(x)
    x_seq = [ad.reshape(ad.slice_(xt, (slice(None), t, slice(None))),
                        (batch, in_dim)) for t in range(seq_len)]
    states1 = _gru_layer(x_seq, p, "gru1", cfg.hidden, batch)
    states2 = _gru_layer(states1, p, "gru2", cfg.hidden, batch)
    seq = ad.stack(states2, axis=1)                    # (batch, T, hidden)
    seq = ad.transpose(seq, (0, 2, 1))                 # (batch, hidden, T)
    for i, d in enumerate(cfg.tcn_dilations):
        seq = _tcn_block(seq, p, f"tcn{i}", d)
    embedding = ad.mean_over_axis(seq, axis=2)         # (batch, hidden)
    logits = ad.add(ad.matmul(embedding, p["head.W"]), p["head.b"])
    if return_graph:
        return embedding, logits
    if task == "stroke_type":
        probs = ad.softmax(logits, axis=1).data
    else:
        probs = ad.sigmoid(logits).data
    return embedding.data, probs


def _labels_for_task(features: list[SegmentFeatures], task: str) -> np.ndarray:
    classes = TASK_CLASSES[task]
    out = []
    for f in features:
        value = getattr(f.labels, task)
        if value is None:
            raise ValueError(f"segment {f.recording_id}/{f.segment_index} "
                             f"has no label for task {task!r}")
        out.append(classes.index(value))
    return np.array(out, dtype=int)


def task_segments(features: list[SegmentFeatures], task: str) -> list[SegmentFeatures]:
    """Segments that carry a label for the task (stroke-only for binary tasks)."""
    if task == "stroke_type":
        return list(features)
    return [f for f in features if getattr(f.labels, task) is not None]


def probs_to_labels(probs: np.ndarray, task: str) -> list[str]:
    classes = TASK_CLASSES[task]
    if task == "stroke_type":
        return [classes[int(i)] for i in np.argmax(probs, axis=1)]
    return [classes[int(p >= 0.5)] for p in probs[:, 0]]


def _segment_records(features: list[SegmentFeatures], probs: np.ndarray,
                     task: str) -> list[PredictionRecord]:
    labels = probs_to_labels(probs, task)
    out = []
    for f, pred, p in zip(features, labels, probs):
        vec = p if task == "stroke_type" else np.array([1.0 - p[0], p[0]])
        out.append(PredictionRecord(
            patient_id=f.patient_id,
            true_label=getattr(f.labels, task),
            predicted_label=pred,
            probabilities=vec,
        ))
    return out


def train_task(task: str, train_features: list[SegmentFeatures],
               val_features: list[SegmentFeatures],
               cfg: TrainConfig | None = None,
               model_cfg: ModelConfig | None = None
               ) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Train one task model with early stopping on validation macro-F1."""
    cfg = cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig()
    train_features = task_segments(train_features, task)
    val_features = task_segments(val_features, task)
    if not train_features or not val_features:
        raise ValueError(f"empty split for task {task!r}")
    params = init_params(task, model_cfg, cfg.seed)
    state = ad.AdamState({k: v.shape for k, v in params.items()},
                         lr=cfg.lr, weight_decay=cfg.weight_decay)
    x_train = np.stack([f.matrix for f in train_features])
    y_train = _labels_for_task(train_features, task)
    x_val = np.stack([f.matrix for f in val_features])
    n_classes = len(TASK_CLASSES[task])
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_params = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tensors = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
            _, logits = forward(x_train[idx], tensors, task, model_cfg,
                                return_graph=True)
            if task == "stroke_type":
                onehot = np.eye(n_classes)[y_train[idx]]
                loss = ad.softmax_cross_entropy(logits, onehot)
            else:
                loss = ad.bce_with_logits(logits, y_train[idx][:, None].astype(float))
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} (task {task})")
            ad.backward(loss)
            grads = {k: t.grad for k, t in tensors.items()}
            ad.adam_step(params, grads, state)
            losses.append(float(loss.data))
        _, val_probs = forward(x_val, params, task, model_cfg)
        val_f1 = macro_f1(_segment_records(val_features, val_probs, task))
        history.rows.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                             "val_macro_f1": val_f1})
        if val_f1 > history.best_val_macro_f1:
            history.best_val_macro_f1 = val_f1
            history.best_epoch = epoch
            best_params = copy.deepcopy(params)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    assert best_params is not None
    return best_params, history


# ---------------------------------------------------------------------------
# patient-level aggregation


def predict_patient(segment_labels: list[str], segment_probs: list[np.ndarray],
                    classes: tuple[str, ...]) -> tuple[str, np.ndarray]:
    """Majority vote over segments; ties break on highest mean probability."""
    if not segment_labels:
        raise ValueError("no segments for patient")
    mean_probs = np.mean(np.stack(segment_probs), axis=0)
    counts: dict[str, int] = {}
    for lab in segment_labels:
        counts[lab] = counts.get(lab, 0) + 1
    top = max(counts.values())
    tied = [lab for lab, c in counts.items() if c == top]
    if len(tied) == 1:
        return tied[0], mean_probs
    best = max(tied, key=lambda lab: mean_probs[classes.index(lab)])
    return best, mean_probs


# ---------------------------------------------------------------------------
# checkpoints (flat binary + JSON index)


def save_checkpoint(bundles: dict[str, dict[str, np.ndarray]], path: str | Path,
                    metadata: dict | None = None) -> None:
    """Write named arrays from all task models into <path>.bin + <path>.json."""
    path = Path(path)
    index = []
    offset = 0
    blobs = []
    for task in sorted(bundles):
        for name in sorted(bundles[task]):
            arr = np.ascontiguousarray(bundles[task][name], dtype="<f8")
            index.append({"name": f"{task}/{name}", "shape": list(arr.shape),
                          "offset": offset})
            offset += arr.size
            blobs.append(arr.ravel())
    path.with_suffix(".bin").write_bytes(np.concatenate(blobs).tobytes())
    doc = {"arrays": index, "metadata": metadata or {}}
    path.with_suffix(".json").write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    bundles: dict[str, dict[str, np.ndarray]] = {}
    for entry in doc["arrays"]:
        task, name = entry["name"].split("/", 1)
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"])
        bundles.setdefault(task, {})[name] = arr.copy()
    return bundles, doc.get("metadata", {})
