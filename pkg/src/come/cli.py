"""Command-line interface: ``come train|detect|eval|export``.

Exit codes: 0 success, 2 usage or validation error, 3 I/O or integrity
error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import write_word2vec
from .gmm import CovarianceError, GmmState, predict_communities
from .graph import Graph, GraphFormatError, read_edge_list
from .metrics import conductance, is_single_label, load_labels, nmi
from .trainer import (PRESETS, NumericalError, TrainConfig, coerce, parse_config_text,
                      train, write_loss_trace)

logger = logging.getLogger("come")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
ENV_PREFIX = "COME_"

EMBEDDINGS = "embeddings.txt"
COMMUNITY = "community.json"
LOSS_TRACE = "loss_trace.csv"
MODEL = "model.npz"
MANIFEST = "manifest.json"


class UsageError(ValueError):
    pass


class IntegrityError(OSError):
    pass


# -- configuration -----------------------------------------------------------

_FLAG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def resolve_config(args: argparse.Namespace, environ=os.environ) -> TrainConfig:
    """Merge defaults < preset < config file < environment < flags."""
    values = dict(PRESETS[args.preset])
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for name in _FLAG_FIELDS:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                values[name] = coerce(name, raw)
            except ValueError as exc:
                raise UsageError(f"{ENV_PREFIX}{name.upper()}: {exc}") from None
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    return TrainConfig(**values)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--config", help="key=value config file")
    for name, f in _FLAG_FIELDS.items():
        if f.type == "bool":
            p.add_argument(_flag(name), dest=name, action="store_const", const=True, default=None)
        elif name == "covariance_mode":
            p.add_argument(_flag(name), dest=name, choices=["full", "diagonal"], default=None)
        else:
            p.add_argument(_flag(name), dest=name, type={"int": int, "float": float}[f.type], default=None)


# -- manifest ----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"come": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run_id(config: TrainConfig, input_digests: dict) -> str:
    """Deterministic identifier of a run: hash of its configuration and inputs."""
    blob = json.dumps({"config": config.as_dict(), "inputs": input_digests}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def verify_manifest(model_dir) -> dict:
    """Load the manifest and check every artifact digest it records."""
    model_dir = Path(model_dir)
    manifest = json.loads((model_dir / MANIFEST).read_text(encoding="utf-8"))
    for name, digest in manifest["artifacts"].items():
        if sha256_file(model_dir / name) != digest:
            raise IntegrityError(f"{name} does not match the digest recorded in {MANIFEST}")
    return manifest


# -- artifact writers --------------------------------------------------------

def community_document(gmm: GmmState, resp: np.ndarray, node_ids, top_n: int, rid: str) -> dict:
    top = predict_communities(resp, top_n)
    return {
        "manifest": MANIFEST,
        "run_id": rid,
        **gmm.to_dict(),
        "top_n": top_n,
        "assignments": {str(v): [int(k) for k in row] for v, row in zip(node_ids, top)},
    }


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _embeddings_text(phi: np.ndarray, node_ids) -> str:
    buf = io.StringIO()
    write_word2vec(phi, node_ids, buf)
    return buf.getvalue()


def _load_model(model_dir) -> tuple[dict, dict, dict]:
    model_dir = Path(model_dir)
    manifest = verify_manifest(model_dir)
    with np.load(model_dir / MODEL) as data:
        arrays = {k: data[k] for k in data.files}
    community = json.loads((model_dir / COMMUNITY).read_text(encoding="utf-8"))
    return manifest, arrays, community


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    config = resolve_config(args)
    edge_path = Path(args.edges)
    g = read_edge_list(edge_path)
    inputs = {str(edge_path): sha256_file(edge_path)}
    if args.config:
        inputs[str(args.config)] = sha256_file(args.config)
    if config.K > g.node_count:
        raise UsageError(f"K={config.K} exceeds the number of nodes ({g.node_count})")
    if not 1 <= args.top_n <= config.K:
        raise UsageError(f"--top-n must be in [1, {config.K}]")

    started = time.perf_counter()
    model = train(g, config)
    rid = run_id(config, inputs)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # stage everything, then move into place so a failure leaves nothing behind
    stage = Path(tempfile.mkdtemp(prefix=".come-", dir=out.parent))
    try:
        (stage / EMBEDDINGS).write_text(_embeddings_text(model.tables.phi, g.node_ids), encoding="utf-8")
        (stage / COMMUNITY).write_text(
            _dump_json(community_document(model.gmm, model.resp, g.node_ids, args.top_n, rid)),
            encoding="utf-8")
        with open(stage / LOSS_TRACE, "w", encoding="utf-8", newline="") as fh:
            write_loss_trace(model.loss_trace, fh)
        np.savez(stage / MODEL, phi=model.tables.phi, phi_ctx=model.tables.phi_ctx,
                 resp=model.resp, node_ids=np.asarray(g.node_ids))
        manifest = {
            "run_id": rid,
            "config": config.as_dict(),
            "seed": config.seed,
            "inputs": inputs,
            "graph": {"nodes": g.node_count, "edges": g.edge_count,
                      "self_loops_dropped": g.self_loops_dropped},
            "timings": {**model.timings, "total": time.perf_counter() - started},
            "versions": _versions(),
            "artifacts": {name: sha256_file(stage / name)
                          for name in (EMBEDDINGS, COMMUNITY, LOSS_TRACE, MODEL)},
        }
        (stage / MANIFEST).write_text(_dump_json(manifest), encoding="utf-8")
        out.mkdir(exist_ok=True)
        for name in (EMBEDDINGS, COMMUNITY, LOSS_TRACE, MODEL, MANIFEST):
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    last = model.loss_trace[-1]
    print(f"trained {g.node_count} nodes, K={config.K}, d={config.d}; "
          f"final loss/|V| {last.total_per_node:.6f}; artifacts in {out}")
    return EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_detect(args) -> int:
    _, arrays, _ = _load_model(args.model_dir)
    resp = arrays["resp"]
    K = resp.shape[1]
    if not 1 <= args.N <= K:
        raise UsageError(f"N must be in [1, {K}], got {args.N}")
    top = predict_communities(resp, args.N)
    lines = [" ".join([str(v), *map(str, row)]) for v, row in zip(arrays["node_ids"], top)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def read_assignments(path) -> dict[int, int]:
    """Top-1 community per node from a ``node_id k1 [k2 ...]`` file."""
    result = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 2:
                raise UsageError(f"{path}:{lineno}: expected 'node_id k1 [k2 ...]'")
            try:
                result[int(parts[0])] = int(parts[1])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-integer field") from None
    return result


def _missing_message(what: str, missing) -> str:
    shown = " ".join(map(str, sorted(missing)[:20]))
    more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
    return f"{what} missing for {len(missing)} node(s): {shown}{more}"


def evaluate(g: Graph, assignments: dict[int, int], labels: dict | None,
             normalization: str = "arithmetic", aggregate: str = "mean") -> list[tuple[str, float]]:
    missing = [int(v) for v in g.node_ids if int(v) not in assignments]
    if missing:
        raise UsageError(_missing_message("assignments", missing))
    partition = np.array([assignments[int(v)] for v in g.node_ids])
    rows = [("conductance", conductance(g, partition, aggregate))]
    if labels is not None and is_single_label(labels):
        unassigned = [v for v in labels if v not in assignments]
        if unassigned:
            raise UsageError(_missing_message("assignments of labelled nodes", unassigned))
        nodes = sorted(labels)
        truth = [next(iter(labels[v])) for v in nodes]
        rows.append(("nmi", nmi([assignments[v] for v in nodes], truth, normalization)))
    return rows


def cmd_eval(args) -> int:
    g = read_edge_list(args.edges)
    assignments = read_assignments(args.assignments)
    labels = None
    if args.labels:
        with open(args.labels, encoding="utf-8") as fh:
            labels = load_labels(fh)
    rows = evaluate(g, assignments, labels, args.nmi_normalization, args.conductance_aggregate)
    sys.stdout.write("metric,value\n")
    for name, value in rows:
        sys.stdout.write(f"{name},{value!r}\n")
    summary = f"{len(assignments)} nodes, {len(set(assignments.values()))} communities; " + \
        "; ".join(f"{name} = {value:.4f}" for name, value in rows)
    if labels is not None and not is_single_label(labels):
        summary += "; NMI skipped (multi-label ground truth)"
    print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_export(args) -> int:
    _, arrays, community = _load_model(args.model_dir)
    if args.format == "text":
        text = _embeddings_text(arrays["phi"], arrays["node_ids"])
    else:
        text = _dump_json(community)
    _emit(text, args.out)
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="come", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-iteration losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train embeddings and the community mixture")
    p.add_argument("edges", help="edge list, one 'u v' pair per line")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--top-n", type=int, default=1, help="assignments stored per node")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="write top-N community ids per node")
    p.add_argument("model_dir")
    p.add_argument("-N", type=int, default=1)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="conductance and, with labels, NMI")
    p.add_argument("edges")
    p.add_argument("assignments")
    p.add_argument("--labels")
    p.add_argument("--nmi-normalization", choices=["arithmetic", "max", "sqrt"], default="arithmetic")
    p.add_argument("--conductance-aggregate", choices=["mean", "sum", "max"], default="mean")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="re-emit embeddings or the community model")
    p.add_argument("model_dir")
    p.add_argument("--format", choices=["text", "community"], default="text")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, CovarianceError) as exc:
        print(f"come: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IntegrityError, OSError) as exc:
        print(f"come: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, GraphFormatError, ValueError, KeyError) as exc:
        print(f"come: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
