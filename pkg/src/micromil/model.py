"""Model parameters, the per-bag forward pass and the model file format.

Model files are a text header followed by little-endian float32 payloads::

    MICROMIL-MODEL 1
    kind micromil
    config clusters=16
    ...
    adam_step 0
    tensor centroids 16 32
    tensor w 32 1
    ...
    end
    <payload: each declared tensor, row-major, in declaration order>
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dce, gnn, graph as graph_mod, rie
from .autodiff import Tensor
from .errors import ContractError, FormatError

FORMAT_NAME = "MICROMIL-MODEL"
FORMAT_VERSION = 1
CLUSTER_MODES = ("dce", "kmeans")


@dataclass
class TrainConfig:
    clusters: int = 36
    hidden: int = 128
    layers: int = 2
    lr: float = 1e-3
    dropout: float = 0.5
    epochs: int = 50
    tau: float = 1.0
    seed: int = 0
    edge_method: str = "cosine"
    rie_select: str = "gumbel"
    rie_cluster: str = "dce"
    warmup_dce_iters: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # sample Gumbel noise during training; evaluation never does
    gumbel_noise: bool = True

    def validate(self) -> None:
        for name in ("clusters", "hidden", "layers"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr < 0:
            raise ContractError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0 or self.warmup_dce_iters < 0:
            raise ContractError("epochs and warmup_dce_iters must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.tau <= 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.edge_method not in graph_mod.EDGE_METHODS:
            raise ContractError(f"unknown edge method {self.edge_method!r}")
        if self.rie_select not in rie.SELECT_MODES:
            raise ContractError(f"unknown selection mode {self.rie_select!r}")
        if self.rie_cluster not in CLUSTER_MODES:
            raise ContractError(f"unknown clustering mode {self.rie_cluster!r}")

    def to_items(self) -> list[tuple[str, str]]:
        return [(f.name, repr(getattr(self, f.name)) if isinstance(getattr(self, f.name), float)
                 else str(getattr(self, f.name))) for f in fields(self)]

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.type in ("bool", bool):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        unknown = set(items) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**kwargs)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ModelParams:
    centroids: Tensor
    w: Tensor
    gnn: gnn.GnnParams
    config: TrainConfig
    adam: AdamState = field(default_factory=AdamState)

    kind = "micromil"

    def tensors(self) -> dict[str, Tensor]:
        return {"centroids": self.centroids, "w": self.w, **self.gnn.tensors()}

    def trainable(self) -> dict[str, Tensor]:
        out = self.tensors()
        if self.config.rie_cluster == "kmeans":
            del out["centroids"]
        return out


@dataclass
class MeanPoolParams:
    """Baseline: sigmoid(mean(features) . W + b)."""

    W: Tensor
    b: Tensor
    config: TrainConfig
    adam: AdamState = field(default_factory=AdamState)

    kind = "meanpool"

    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors()


# -- forward ---------------------------------------------------------------

def bag_forward(params: ModelParams, features, mode: str = "eval",
                rng: np.random.Generator | None = None, noise: str | None = None,
                trace: rie.SelectionTrace | None = None, straight_through: bool = True,
                return_parts: bool = False):
    """Bag probability (1x1 tensor) through clustering, selection, graph and GCN.

    ``noise`` defaults to sampled Gumbel noise in train mode (when the config
    enables it) and zero noise in eval mode.
    """
    cfg = params.config
    dtype = params.w.data.dtype
    f = features if isinstance(features, Tensor) else Tensor(features, dtype=dtype)
    if f.cols != params.w.rows:
        raise ContractError(f"bag has d={f.cols}, model expects d={params.w.rows}")
    if noise is None:
        noise = "sampled" if mode == "train" and cfg.gumbel_noise else "zero"
    if rng is None:
        # eval-time randomness (random ablation arms) is fixed per bag
        rng = np.random.default_rng([cfg.seed, 7])

    C_eff = dce.effective_clusters(params.centroids.rows, f.rows)
    mu = ad.head_rows(params.centroids, C_eff)
    members = None
    if cfg.rie_cluster == "dce":
        Z = dce.soft_assign(f, mu)
    else:
        d2 = np.sum((f.data[:, None, :] - mu.data[None, :, :]) ** 2, axis=2)
        hard = rie.one_hot_argmax(-d2)
        members = hard > 0
        Z = Tensor(hard, dtype=dtype)

    scores = rie.score_features(f, Z, params.w)
    reps = rie.select_representatives(
        f, scores, tau=cfg.tau, rng=rng, mode=cfg.rie_select, noise=noise, Z=Z,
        centroids=mu.data, members=members, straight_through=straight_through, trace=trace)
    g = graph_mod.build_graph(reps.reps, cfg.edge_method, tau=cfg.tau, rng=rng, noise=noise,
                              straight_through=straight_through, trace=trace)
    p = gnn.forward(g, params.gnn, mode, rng)
    if return_parts:
        return p, {"Z": Z, "reps": reps, "graph": g}
    return p


def meanpool_forward(params: MeanPoolParams, features, mode: str = "eval",
                     rng: np.random.Generator | None = None) -> Tensor:
    f = features if isinstance(features, Tensor) else Tensor(features, dtype=params.W.data.dtype)
    return ad.sigmoid(ad.add(ad.matmul(ad.mean_rows(f), params.W), params.b))


def predict(params, features) -> float:
    """Eval-mode bag probability."""
    if isinstance(params, MeanPoolParams):
        return meanpool_forward(params, features).item()
    return bag_forward(params, features, mode="eval").item()


# -- initialisation ----------------------------------------------------------

def pooled_features(bag_features: list[np.ndarray], limit: int, rng: np.random.Generator) -> np.ndarray:
    pooled = np.concatenate(bag_features, axis=0).astype(np.float64)
    if len(pooled) > limit:
        pooled = pooled[np.sort(rng.choice(len(pooled), size=limit, replace=False))]
    return pooled


def init_model(config: TrainConfig, bag_features: list[np.ndarray], dtype=None) -> ModelParams:
    """Seeded initialisation: k-means++ centroids (+ warm-up for DCE), Glorot GCN weights."""
    config.validate()
    dtype = dtype or ad.get_dtype()
    rng = np.random.default_rng([config.seed, 5])
    pooled = pooled_features(bag_features, 4096, rng)
    d = pooled.shape[1]
    C = min(config.clusters, len(pooled))
    centroids = dce.init_centroids(pooled, C, seed=config.seed)
    if config.rie_cluster == "dce" and config.warmup_dce_iters > 0:
        state = dce.ClusterState(centroids, dce.soft_assign_np(pooled, centroids))
        centroids = dce.refine_alternating(pooled, state, config.warmup_dce_iters).centroids
    w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 1))
    net = gnn.GnnParams.init(d, config.hidden, config.layers, config.dropout, rng, dtype=dtype)
    return ModelParams(
        Tensor(centroids, requires_grad=config.rie_cluster == "dce", dtype=dtype),
        Tensor(w, requires_grad=True, dtype=dtype),
        net,
        config,
    )


def init_meanpool(config: TrainConfig, d: int, dtype=None) -> MeanPoolParams:
    dtype = dtype or ad.get_dtype()
    rng = np.random.default_rng([config.seed, 6])
    limit = np.sqrt(6.0 / (d + 1))
    return MeanPoolParams(
        Tensor(rng.uniform(-limit, limit, size=(d, 1)), requires_grad=True, dtype=dtype),
        Tensor(np.zeros((1, 1)), requires_grad=True, dtype=dtype),
        config,
    )


# -- serialisation -------------------------------------------------------------

def save_model(params, path) -> None:
    tensors = {name: t.data for name, t in params.tensors().items()}
    for name in params.trainable():
        if name in params.adam.m:
            tensors[f"adam_m.{name}"] = params.adam.m[name]
            tensors[f"adam_v.{name}"] = params.adam.v[name]
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}", f"kind {params.kind}"]
    lines += [f"config {k}={v}" for k, v in params.config.to_items()]
    lines.append(f"adam_step {params.adam.step}")
    lines += [f"tensor {name} {a.shape[0]} {a.shape[1]}" for name, a in tensors.items()]
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for a in tensors.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    end = raw.find(b"\nend\n")
    if end < 0:
        raise FormatError(f"{path}: missing header terminator")
    header = raw[:end].decode("ascii").split("\n")
    payload = memoryview(raw)[end + len(b"\nend\n"):]
    if header[0] != f"{FORMAT_NAME} {FORMAT_VERSION}":
        raise FormatError(f"{path}: not a {FORMAT_NAME} {FORMAT_VERSION} file")

    kind, step, items, shapes = None, 0, {}, []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "kind":
            kind = rest
        elif key == "config":
            k, _, v = rest.partition("=")
            items[k] = v
        elif key == "adam_step":
            step = int(rest)
        elif key == "tensor":
            name, r, c = rest.split()
            shapes.append((name, int(r), int(c)))
        else:
            raise FormatError(f"{path}: unexpected header line {line!r}")

    arrays, offset = {}, 0
    for name, r, c in shapes:
        n = 4 * r * c
        if offset + n > len(payload):
            raise FormatError(f"{path}: truncated payload at tensor {name}")
        arrays[name] = np.frombuffer(payload[offset:offset + n], dtype="<f4").reshape(r, c).astype(np.float32)
        offset += n
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes")

    config = TrainConfig.from_items(items)
    adam = AdamState(step,
                     {k[7:]: a for k, a in arrays.items() if k.startswith("adam_m.")},
                     {k[7:]: a for k, a in arrays.items() if k.startswith("adam_v.")})

    def t(name, grad=True):
        return Tensor(arrays[name], requires_grad=grad, dtype=np.float32)

    if kind == "meanpool":
        return MeanPoolParams(t("W"), t("b"), config, adam)
    if kind != "micromil":
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    layers = [t(f"gcn{i}") for i in range(config.layers)]
    net = gnn.GnnParams(layers, t("classifier"), t("bias"), config.dropout)
    return ModelParams(t("centroids", config.rie_cluster == "dce"), t("w"), net, config, adam)
