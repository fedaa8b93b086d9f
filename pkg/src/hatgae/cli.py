"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .centrality import PowerIterConfig, eigenvector_scores, indegree_scores, node_scores, pagerank_scores
from .evaluation import ProbeConfig, export_embeddings, linear_probe, load_embeddings, save_embeddings
from .exceptions import (
    AllClean,
    ConfigError,
    FiniteCheckError,
    GraphFormatError,
    NonConvergence,
    ScheduleExhausted,
    TrainingDiverged,
    ZeroVector,
)
from .gat import load_checkpoint, save_checkpoint
from .graph import SbmConfig, load_graph_bundle, save_graph_bundle, sbm_generate
from .masking import build_mask_schedule, dimension_importance
from .training import TrainConfig, train
from .utils import STREAMS, rng_stream

log = logging.getLogger("hatgae")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

CONFIG_KEYS = ("dataset", "pf", "pn", "num", "epochs", "lr", "weight_decay", "hidden", "heads",
               "seed", "centrality", "variant", "stop_grad_target")
_FLOAT_KEYS = {"pf", "pn", "lr", "weight_decay"}
_INT_KEYS = {"num", "epochs", "hidden", "heads", "seed"}
VARIANT_ORDER = ("full", "am", "hm", "tc")


# --------------------------------------------------------------------------
# configuration


def _bool(text, key):
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true|false, got {text!r}")


def _check_key(key):
    if key not in CONFIG_KEYS:
        near = difflib.get_close_matches(key, CONFIG_KEYS, n=1)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")


def parse_config_text(text, source="<config>"):
    """Parse ``key=value`` lines (``#`` comments, blank lines ignored) into a string dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        _check_key(key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def apply_overrides(values, overrides):
    values = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        _check_key(key)
        values[key] = value
    return values


def train_config_from(values):
    """Typed :class:`TrainConfig` from a string dict (``dataset`` is ignored here)."""
    kwargs = {}
    for key, text in values.items():
        if key == "dataset":
            continue
        try:
            if key in _FLOAT_KEYS:
                kwargs[key] = float(text)
            elif key in _INT_KEYS:
                kwargs[key] = int(text)
            elif key == "stop_grad_target":
                kwargs[key] = _bool(text, key)
            else:
                kwargs[key] = text.strip().lower()
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return TrainConfig(**kwargs).validate()


def sbm_config_from(source, seed):
    """``sbm`` or ``sbm:key=value,...``; the graph seed derives from the master seed."""
    derived = int(rng_stream(seed, "sbm").integers(2**31 - 1))
    cfg = SbmConfig(seed=derived)
    _, _, rest = source.partition(":")
    fields = {f for f in asdict(cfg)}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, _, value = item.partition("=")
        if key not in fields:
            raise ConfigError(f"unknown sbm field {key!r}")
        typ = type(getattr(cfg, key))
        try:
            cfg = replace(cfg, **{key: typ(value)})
        except ValueError:
            raise ConfigError(f"sbm field {key}: cannot parse {value!r}") from None
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_dataset(values, seed):
    """Return ``(graph, dataset_record)`` for the ``dataset`` config entry."""
    source = values.get("dataset")
    if not source:
        raise ConfigError("config must set dataset (a bundle directory or 'sbm[:k=v,...]')")
    if source == "sbm" or source.startswith("sbm:"):
        cfg = sbm_config_from(source, seed)
        return sbm_generate(cfg), {"kind": "sbm", "sbm": asdict(cfg)}
    path = os.path.abspath(source)
    return load_graph_bundle(path), {"kind": "bundle", "path": path}


def probe_config_from(args, seed):
    l2 = tuple(args.l2) if args.l2 else ProbeConfig.l2
    return ProbeConfig(l2=l2, probe_epochs=args.probe_epochs, probe_lr=args.probe_lr,
                       seed=seed if args.probe_seed is None else args.probe_seed,
                       metric=args.metric)


# --------------------------------------------------------------------------
# helpers


def _manifest(args, out_path, extra=None):
    record = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "version": __version__,
        "seed_streams": STREAMS,
    }
    record.update(extra or {})
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _write_text(args, text):
    """Write to ``args.out`` (plus a manifest beside it) or to stdout."""
    if args.out is None:
        sys.stdout.write(text)
        return
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    _manifest(args, f"{args.out}.manifest.json")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _probe_or_nan(g, emb, pcfg):
    if g.labels is None or g.split is None:
        return float("nan"), None
    return linear_probe(emb, g.labels, g.split, pcfg)


def _run_once(g, cfg, out_dir, pcfg=None):
    """Train, write logs/checkpoint/embeddings into ``out_dir``, probe if possible."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, report = train(g, cfg)
    (out_dir / "loss.jsonl").write_text(report.to_jsonl(timing=False), encoding="utf-8")
    (out_dir / "train_log.jsonl").write_text(report.to_jsonl(timing=True), encoding="utf-8")
    ckpt = out_dir / "checkpoint.ckpt"
    save_checkpoint(ckpt, params)
    report.checkpoint_path = str(ckpt)
    emb = export_embeddings(g, params)
    save_embeddings(out_dir / "embeddings.tsv", emb)
    value, probe = _probe_or_nan(g, emb, pcfg or ProbeConfig(seed=cfg.seed))
    return params, report, emb, value, probe


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = SbmConfig(args.n_nodes, args.n_blocks, args.p_in, args.p_out, args.feat_dim,
                    args.signal, args.noise_sigma, args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    g = sbm_generate(cfg)
    save_graph_bundle(g, args.out)
    _manifest(args, Path(args.out) / "manifest.json", {"sbm": asdict(cfg)})
    print(f"wrote {g.n_nodes} nodes, {g.n_edges // 2} undirected edges to {args.out}")


def cmd_importance(args):
    g = load_graph_bundle(args.graph)
    pcfg = PowerIterConfig(tol=args.tol, max_iter=args.max_iter, alpha=args.alpha)
    if args.method == "indegree":
        s, header = indegree_scores(g), "# method=indegree"
    elif args.method == "eigenvector":
        s, lam = eigenvector_scores(g, pcfg)
        header = f"# method=eigenvector lambda={lam!r} (aggregates A[v,u]*s[u] over out-edges v->u)"
    else:
        s, header = pagerank_scores(g, pcfg), f"# method=pagerank alpha={args.alpha!r}"
    lines = [header] + [f"{i}\t{_fmt(float(v))}" for i, v in enumerate(s.values)]
    _write_text(args, "\n".join(lines) + "\n")


def cmd_schedule_preview(args):
    if args.graph:
        g = load_graph_bundle(args.graph)
        sd = dimension_importance(g, node_scores(g, args.centrality))
    elif args.n_dims:
        sd = np.zeros(args.n_dims)
    else:
        raise ConfigError("schedule-preview needs --graph or --n-dims")
    sched = build_mask_schedule(sd, args.pf, args.rounds)
    lines = ["round\tremaining\tcount\tfirst_masked"]
    start = 0
    for i, (m, r) in enumerate(zip(sched.counts, sched.remaining), 1):
        ids = sched.order[start:start + m][:10].tolist()
        start += m
        lines.append(f"{i}\t{r}\t{m}\t{','.join(map(str, ids))}")
    _write_text(args, "\n".join(lines) + "\n")


def cmd_train(args):
    values = args.config_values
    cfg = train_config_from(values)
    g, dataset = load_dataset(values, cfg.seed)
    pcfg = probe_config_from(args, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    params, report, emb, value, probe = _run_once(g, cfg, out, pcfg)
    runs.append(value)
    for i in range(1, args.runs):
        if args.rerun_encoder:
            rcfg = replace(cfg, seed=cfg.seed + i)
            *_, v, _ = _run_once(g, rcfg, out / f"run{i}", replace(pcfg, seed=pcfg.seed + i))
        else:
            v, _ = _probe_or_nan(g, emb, replace(pcfg, seed=pcfg.seed + i))
        runs.append(v)
    if probe is not None:
        summary = {
            "metric": pcfg.metric,
            "value": float(np.mean(runs)),
            "std": float(np.std(runs)),
            "runs": runs,
            "rerun": "encoder" if args.rerun_encoder else "probe",
            "l2_chosen": probe["l2_chosen"],
            "seed": pcfg.seed,
        }
        (out / "probe.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _manifest(args, out / "manifest.json", {
        "train_config": asdict(cfg), "probe_config": asdict(pcfg), "dataset": dataset,
        "out_dir": str(out.resolve()), "n_parameters": report.n_parameters,
    })
    print(f"final loss {report.records[-1].loss:.6f}; probe {pcfg.metric} "
          f"{_fmt(float(np.mean(runs)))}; outputs in {out}")


def run_ablation(g, cfg, out, pcfg):
    """Train every variant with the shared seed; returns the table rows."""
    rows = []
    for variant in VARIANT_ORDER:
        vcfg = replace(cfg, variant=variant)
        _, report, _, value, _ = _run_once(g, vcfg, Path(out) / variant, pcfg)
        note = "noise vector excluded from parameters" if variant == "tc" else ""
        rows.append({"variant": variant, "loss_final": report.records[-1].loss,
                     "probe_metric": value, "n_params": report.n_parameters, "note": note})
    return rows


def cmd_ablate(args):
    values = args.config_values
    cfg = train_config_from(values)
    g, dataset = load_dataset(values, cfg.seed)
    pcfg = probe_config_from(args, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(g, cfg, out, pcfg)
    cols = ("variant", "loss_final", "probe_metric", "n_params", "note")
    text = "\t".join(cols) + "\n" + "".join(
        "\t".join(_fmt(r[c]) for c in cols) + "\n" for r in rows)
    (out / "ablation.tsv").write_text(text, encoding="utf-8")
    _manifest(args, out / "manifest.json", {
        "train_config": asdict(cfg), "probe_config": asdict(pcfg), "dataset": dataset})
    sys.stdout.write(text)


def sweep_values(axis, values, max_rate=0.9):
    out = []
    for v in values:
        if axis in ("pf", "pn"):
            v = float(v)
            if not 0.0 < v <= max_rate:
                raise ConfigError(f"{axis}={v} outside (0, {max_rate}]")
        elif axis == "num":
            v = int(v)
            if v < 1:
                raise ConfigError(f"num must be >= 1, got {v}")
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        out.append(v)
    return out


def num_from_rounds(epochs, rounds):
    """Interval giving ``rounds`` masking operations over ``epochs`` epochs."""
    return max(1, epochs // rounds)


def cmd_sweep(args):
    values = args.config_values
    base = train_config_from(values)
    g, dataset = load_dataset(values, base.seed)
    pcfg = probe_config_from(args, base.seed)
    grid = sweep_values(args.axis, args.values, args.max_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{args.axis}\tnum\tloss_final\tprobe_metric\tstatus"]
    for v in grid:
        if args.axis == "num":
            num = num_from_rounds(base.epochs, v) if args.as_rounds else v
            cfg = replace(base, num=num)
        else:
            cfg = replace(base, **{args.axis: v})
        try:
            cfg.validate()
            _, report, _, value, _ = _run_once(g, cfg, out / f"{args.axis}={v}", pcfg)
            lines.append(f"{v}\t{cfg.num}\t{_fmt(report.records[-1].loss)}\t{_fmt(float(value))}\tok")
        except (ConfigError, ScheduleExhausted, AllClean, TrainingDiverged, ValueError) as exc:
            log.warning("sweep cell %s=%s failed: %s", args.axis, v, exc)
            lines.append(f"{v}\t{cfg.num}\tnan\tnan\terror: {type(exc).__name__}: {exc}")
    text = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(text, encoding="utf-8")
    _manifest(args, out / "manifest.json", {
        "train_config": asdict(base), "probe_config": asdict(pcfg), "dataset": dataset})
    sys.stdout.write(text)


def cmd_embed(args):
    g = load_graph_bundle(args.graph)
    params = load_checkpoint(args.checkpoint)
    emb = export_embeddings(g, params)
    save_embeddings(args.out, emb)
    _manifest(args, f"{args.out}.manifest.json")


def cmd_probe(args):
    g = load_graph_bundle(args.graph)
    emb = load_embeddings(args.embeddings)
    if emb.shape[0] != g.n_nodes:
        raise ConfigError(f"embeddings have {emb.shape[0]} rows, graph has {g.n_nodes} nodes")
    pcfg = probe_config_from(args, args.probe_seed or 0)
    vals = []
    report = None
    for i in range(args.runs):
        v, rep = linear_probe(emb, g.labels, g.split, replace(pcfg, seed=pcfg.seed + i))
        vals.append(v)
        report = report or rep
    result = {"metric": pcfg.metric, "value": float(np.mean(vals)), "l2_chosen": report["l2_chosen"],
              "seed": pcfg.seed}
    if args.runs > 1:
        result.update(std=float(np.std(vals)), runs=vals)
    _write_text(args, json.dumps(result) + "\n")


def cmd_replay(args):
    with open(args.manifest, encoding="utf-8") as fh:
        record = json.load(fh)
    stored = dict(record["args"])
    stored["out"] = args.out
    stored["strict"] = True
    ns = argparse.Namespace(**stored)
    handler = COMMANDS[record["command"]]
    return _dispatch(handler, ns)


COMMANDS = {
    "synth": cmd_synth,
    "importance": cmd_importance,
    "schedule-preview": cmd_schedule_preview,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "replay": cmd_replay,
}


# --------------------------------------------------------------------------
# parser


def _add_probe_flags(p):
    p.add_argument("--l2", type=float, nargs="+", help="l2 candidates, chosen on the validation split")
    p.add_argument("--probe-epochs", type=int, default=300)
    p.add_argument("--probe-lr", type=float, default=0.01)
    p.add_argument("--probe-seed", type=int, default=None)
    p.add_argument("--metric", choices=("accuracy", "micro_f1"), default="accuracy")


def _add_config_flags(p):
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="single-threaded, bit-reproducible execution")
    _add_probe_flags(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="hatgae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a stochastic block model graph bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--n-nodes", type=int, default=300)
    p.add_argument("--n-blocks", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--signal", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("importance", help="node importance scores as TSV",
                       description="Eigenvector scores aggregate A[v,u]*s[u], i.e. over v's "
                                   "out-edges; for directed graphs this is the transpose of the "
                                   "'cited-by' convention.")
    p.add_argument("graph", help="graph bundle directory")
    p.add_argument("--method", choices=("indegree", "eigenvector", "pagerank"), default="indegree")
    p.add_argument("--alpha", type=float, default=0.85, help="PageRank damping factor")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("schedule-preview", help="per-round masking counts as TSV")
    p.add_argument("--graph", help="graph bundle directory")
    p.add_argument("--n-dims", type=int, help="feature width when no graph is given (all scores equal)")
    p.add_argument("--centrality", choices=("indegree", "eigenvector", "pagerank"), default="indegree")
    p.add_argument("--pf", type=float, required=True)
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("train", help="train, checkpoint, embed and probe")
    _add_config_flags(p)
    p.add_argument("--runs", type=int, default=1, help="repeat the evaluation this many times")
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--rerun-encoder", action="store_true", help="retrain the encoder per run")
    grp.add_argument("--rerun-probe", action="store_true", help="only re-fit the probe per run (default)")

    p = sub.add_parser("ablate", help="train the full model and the am/hm/tc variants")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="one run per value of pf, pn or num")
    _add_config_flags(p)
    p.add_argument("--axis", choices=("pf", "pn", "num"), required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--as-rounds", action="store_true", help="num values are round counts, not intervals")
    p.add_argument("--max-rate", type=float, default=0.9, help="upper guard for pf/pn values")

    p = sub.add_parser("embed", help="export frozen-encoder embeddings")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="linear probe on an embeddings TSV")
    p.add_argument("--graph", required=True, help="bundle providing labels and split")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", help="output JSON file (default: stdout)")
    _add_probe_flags(p)

    p = sub.add_parser("replay", help="re-run a manifest in strict mode")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def _dispatch(handler, args):
    if getattr(args, "config", None) and getattr(args, "config_values", None) is None:
        text = Path(args.config).read_text(encoding="utf-8")
        args.config_values = apply_overrides(parse_config_text(text, args.config), args.set)
    ctx = threadpool_limits(1) if getattr(args, "strict", False) else nullcontext()
    with ctx:
        return handler(args)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "config_values"):
        args.config_values = None
    try:
        _dispatch(COMMANDS[args.command], args)
    except (GraphFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonConvergence, ZeroVector, TrainingDiverged, FiniteCheckError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ScheduleExhausted, AllClean, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
