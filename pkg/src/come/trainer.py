"""Joint training loop: pretraining, EM, and the three SGD phases."""
from __future__ import annotations

import dataclasses
import logging
import time
import zlib
from dataclasses import dataclass, field

import numba
import numpy as np

from . import embedding as emb
from .embedding import EmbeddingTables
from .gmm import GmmState, fit
from .graph import Graph, NoiseDistribution, build_negative_sampler
from .walks import WalkCorpus, sample_paths

logger = logging.getLogger(__name__)

LR_FLOOR_RATIO = 0.01


class NumericalError(FloatingPointError):
    """Non-finite values appeared in the embedding tables."""


@dataclass
class TrainConfig:
    K: int = 2
    gamma: int = 10
    ell: int = 80
    zeta: int = 10
    d: int = 128
    m: int = 5
    alpha: float = 0.1
    beta: float = 0.1
    T1: int = 10
    T2: int = 5
    lr0: float = 0.025
    seed: int = 0
    covariance_mode: str = "full"
    floor: float = 1e-4
    threads: int = 1
    resample_walks: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("K", "gamma", "ell", "zeta", "d", "m", "T1", "T2", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.lr0 <= 0 or self.floor <= 0:
            raise ValueError("lr0 and floor must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.covariance_mode not in ("full", "diagonal"):
            raise ValueError("covariance_mode must be 'full' or 'diagonal'")

    @property
    def diagonal(self) -> bool:
        return self.covariance_mode == "diagonal"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "default": {},
    # karate club visualisation settings; in two dimensions a 1e-4 floor lets
    # components collapse onto a line, so the floor is raised
    "karate-2d": dict(K=4, d=2, alpha=1.0, beta=1.0, gamma=10, ell=80, zeta=5, m=5, floor=1e-2),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


def parse_config_text(text: str) -> dict:
    """Parse flat ``key=value`` lines into typed TrainConfig fields."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def coerce(key: str, value: str):
    kind = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[key]
    if kind == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    return {"int": int, "float": float, "str": str}[kind](value)


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def stream_seed(seed: int, name: str, *extra: int) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *extra]).generate_state(1, np.uint64)[0])


@dataclass
class LossRecord:
    iteration: int
    o1: float
    o2: float
    o3prime: float
    total: float
    total_per_node: float
    seconds: float


@dataclass
class ComEModel:
    tables: EmbeddingTables
    gmm: GmmState
    resp: np.ndarray
    config: TrainConfig
    loss_trace: list[LossRecord] = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _check_finite(tables: EmbeddingTables, phase: str) -> None:
    if not tables.is_finite():
        raise NumericalError(f"non-finite embedding values after the {phase} phase")


def _set_threads(threads: int) -> None:
    if threads > 1:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def pretrain(g: Graph, corpus: WalkCorpus, config: TrainConfig,
             nd: NoiseDistribution | None = None) -> EmbeddingTables:
    """Random init followed by one skip-gram pass over the corpus (alpha=1, no community term)."""
    nd = nd or build_negative_sampler(g)
    tables = emb.init_embeddings(g.node_count, config.d, substream(config.seed, "init"))
    order = substream(config.seed, "pretrain-order").permutation(len(corpus))
    # the pretraining pass is the first of T1 + 1 passes sharing one decay schedule
    total = (config.T1 + 1) * corpus.pair_count(config.zeta)
    emb.second_order_pass(tables, corpus, order, config.zeta, nd, config.m, 1.0, config.lr0,
                          config.lr0 * LR_FLOOR_RATIO, 0, total,
                          stream_seed(config.seed, "pretrain"), config.threads)
    _check_finite(tables, "pretraining")
    return tables


class _Schedule:
    """Per-phase linear learning-rate decay over all T1 iterations.

    The second-order phase also counts the pretraining pass, so its rate
    continues from where pretraining stopped.
    """

    def __init__(self, config: TrainConfig, sizes: dict):
        self.lr0 = config.lr0
        self.lr_min = config.lr0 * LR_FLOOR_RATIO
        self.totals = {k: v * config.T1 for k, v in sizes.items()}
        self.done = dict.fromkeys(sizes, 0)
        self.totals["o2"] += sizes["o2"]
        self.done["o2"] = sizes["o2"]

    def take(self, phase: str, n: int) -> tuple[float, float, int, int]:
        start = self.done[phase]
        self.done[phase] += n
        return self.lr0, self.lr_min, start, self.totals[phase]


def loss_total(tables: EmbeddingTables, gmm: GmmState, resp: np.ndarray, g: Graph,
               corpus: WalkCorpus, nd: NoiseDistribution, config: TrainConfig,
               draw_seed: int) -> tuple[float, float, float, float, float]:
    """Return (o1, o2, o3prime, total, total / |V|).

    The second-order term replays the negatives drawn by stream ``draw_seed``.
    """
    o1 = emb.loss_first_order(tables, g)
    o2 = emb.corpus_loss(tables, corpus, config.zeta, nd, config.m, config.alpha, draw_seed, config.threads)
    o3 = emb.loss_community_bound(tables, gmm, resp, config.beta, config.K)
    total = o1 + o2 + o3
    return o1, o2, o3, total, total / g.node_count


def train(g: Graph, config: TrainConfig, *, community_feedback: bool = True,
          tables: EmbeddingTables | None = None, track_loss: bool = True) -> ComEModel:
    """Alternate mixture fitting and embedding SGD for ``config.T1`` iterations.

    With ``community_feedback=False`` the community SGD phase is skipped (the
    mixture is still fitted each iteration). ``track_loss=False`` skips the
    per-iteration loss evaluation and leaves ``loss_trace`` empty; the trained
    model is bit-identical either way.
    """
    config.validate()
    if config.K > g.node_count:
        raise ValueError(f"K={config.K} exceeds |V|={g.node_count}")
    _set_threads(config.threads)
    timings = {}
    t0 = time.perf_counter()
    nd = build_negative_sampler(g)
    corpus = sample_paths(g, config.gamma, config.ell, stream_seed(config.seed, "walks"), config.threads)
    timings["walks"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if tables is None:
        tables = pretrain(g, corpus, config, nd)
    else:
        tables = tables.copy()
    timings["pretrain"] = time.perf_counter() - t0

    n = g.node_count
    sched = _Schedule(config, {"o1": g.edge_count, "o2": corpus.pair_count(config.zeta), "o3": n})
    gmm_rng = substream(config.seed, "gmm")
    order_rng = substream(config.seed, "order")
    gmm = None
    trace = []
    iteration_seconds = []
    for it in range(1, config.T1 + 1):
        start = time.perf_counter()
        if config.resample_walks and it > 1:
            corpus = sample_paths(g, config.gamma, config.ell, stream_seed(config.seed, "walks", it), config.threads)

        gmm, resp = fit(tables.phi, config.K, config.T2, init=gmm if gmm is not None else "kmeans++",
                        rng=gmm_rng, floor=config.floor, diagonal=config.diagonal)

        edge_order = order_rng.permutation(g.edge_count)
        emb.first_order_pass(tables, g, edge_order, *sched.take("o1", g.edge_count), threads=config.threads)
        _check_finite(tables, "first-order")

        draw_seed = stream_seed(config.seed, "negatives", it)
        walk_order = order_rng.permutation(len(corpus))
        emb.second_order_pass(tables, corpus, walk_order, config.zeta, nd, config.m, config.alpha,
                              *sched.take("o2", corpus.pair_count(config.zeta)), seed=draw_seed,
                              threads=config.threads)
        _check_finite(tables, "second-order")

        node_order = order_rng.permutation(n)
        lr_args = sched.take("o3", n)
        if community_feedback and config.beta > 0:
            emb.community_pass(tables, gmm, resp, config.beta, config.K, node_order, *lr_args,
                               threads=config.threads)
            _check_finite(tables, "community")
        elapsed = time.perf_counter() - start

        iteration_seconds.append(elapsed)
        if track_loss:
            o1, o2, o3, total, per_node = loss_total(tables, gmm, resp, g, corpus, nd, config, draw_seed)
            trace.append(LossRecord(it, o1, o2, o3, total, per_node, elapsed))
            logger.info("iter %d: o1=%.4f o2=%.4f o3'=%.4f total/|V|=%.5f (%.2fs)",
                        it, o1, o2, o3, per_node, elapsed)
    timings["iterations"] = sum(iteration_seconds)

    # final responsibilities reflect the final embeddings
    t0 = time.perf_counter()
    gmm, resp = fit(tables.phi, config.K, config.T2, init=gmm, floor=config.floor, diagonal=config.diagonal)
    timings["final_em"] = time.perf_counter() - t0
    return ComEModel(tables=tables, gmm=gmm, resp=resp, config=config, loss_trace=trace, timings=timings)


def one_iteration_seconds(g: Graph, config: TrainConfig, tables: EmbeddingTables | None = None) -> float:
    """Wall-clock of a single outer iteration (EM + three SGD phases), excluding walks and pretraining."""
    cfg = config.replace(T1=1)
    model = train(g, cfg, tables=tables if tables is not None else
                  emb.init_embeddings(g.node_count, cfg.d, substream(cfg.seed, "init")),
                  track_loss=False)
    return model.timings["iterations"]


def write_loss_trace(trace: list[LossRecord], sink) -> None:
    sink.write("iteration,o1,o2,o3prime,total,total_per_node,seconds\n")
    for r in trace:
        sink.write(f"{r.iteration},{r.o1!r},{r.o2!r},{r.o3prime!r},{r.total!r},{r.total_per_node!r},{r.seconds:.6f}\n")
