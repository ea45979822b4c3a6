"""Command-line front end: ``estimate``, ``simulate``, ``mc`` and ``graph-stats``.

Every command reads its defaults from a JSON schema shipped in
``netdid/schemas``. A ``--config`` file may set any key; flags given on the
command line win over the file. Exit status is 0 on success, 1 when an
estimator or solver fails, and 2 for bad input or usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import load_panel, load_rcs, save_panel
from .errors import DataError, NetDidError
from .exposure import ExposureMap, exposure_vector
from .graph import average_path_length, build_from_edges, graph_stats, random_geometric_graph, read_edges_csv
from .variance import bandwidth_details

__all__ = ["main", "load_schema", "resolve_config", "build_parser", "METHOD_PRESETS"]

EXIT_OK, EXIT_ESTIMATION, EXIT_USAGE = 0, 1, 2

SCHEMAS = {
    "estimate": "estimate_config.schema.json",
    "simulate": "simulate_config.schema.json",
    "mc": "mc_config.schema.json",
    "graph-stats": "graph_stats_config.schema.json",
}

_GNN = {"learner": "gnn", "L": 2, "epochs": 300, "lr": 0.03}
METHOD_PRESETS = {
    "gnn": {"name": "gnn", "estimand": "datt", "learner": {**_GNN, "H": 5}},
    "gnn5": {"name": "gnn5", "estimand": "datt", "learner": {**_GNN, "H": 5}},
    "gnn3": {"name": "gnn3", "estimand": "datt", "learner": {**_GNN, "H": 3}},
    "nglm": {"name": "nglm", "estimand": "datt", "learner": {"learner": "nglm", "L": 1, "poly_degree": 2}},
    "naive": {"name": "naive", "estimand": "naive"},
    "datt0": {"name": "datt0", "estimand": "datt_g", "g": 0},
    "datt1": {"name": "datt1", "estimand": "datt_g", "g": 1},
    "att": {"name": "att", "estimand": "att"},
    "satt0": {"name": "satt0", "estimand": "satt", "d": 0},
}


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    fname = SCHEMAS.get(name, name)
    text = resources.files("netdid").joinpath("schemas").joinpath(fname).read_text()
    return json.loads(text)


def _defaults(schema: dict) -> dict:
    return {k: v["default"] for k, v in schema["properties"].items() if "default" in v}


def _parse_value(spec: dict):
    types = spec.get("type", "string")
    types = [types] if isinstance(types, str) else list(types)

    def parse(raw: str):
        if "null" in types and raw.lower() in ("null", "none"):
            return None
        for t in types:
            try:
                if t == "integer":
                    return int(raw)
                if t == "number":
                    return float(raw)
                if t == "object":
                    return json.loads(raw)
                if t in ("string", "array"):
                    return raw
            except (ValueError, json.JSONDecodeError):
                continue
        raise argparse.ArgumentTypeError(f"cannot parse {raw!r} as {'/'.join(types)}")

    return parse


def _add_schema_flags(p: argparse.ArgumentParser, schema: dict):
    for key, spec in schema["properties"].items():
        flag = "--" + key.replace("_", "-")
        desc = spec.get("description", "")
        if "default" in spec:
            desc += f" (default: {json.dumps(spec['default'])})"
        else:
            desc += " (required)"
        kw = {"dest": key, "default": argparse.SUPPRESS, "help": desc, "type": _parse_value(spec)}
        if "enum" in spec and spec.get("type") in ("string", "integer"):
            kw["choices"] = spec["enum"]
        p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netdid", description="Doubly robust DID under network interference.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "estimate": "estimate a direct, spillover or total effect from node and edge CSVs",
        "simulate": "simulate a dataset and record the true effects",
        "mc": "run a Monte Carlo study",
        "graph-stats": "degree, path-length and bandwidth statistics of a graph",
    }
    for name in SCHEMAS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", default=None, help="JSON file with any of the keys below (default: null)")
        _add_schema_flags(p, load_schema(name))
    return ap


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Schema defaults, then the config file, then explicit flags."""
    schema = load_schema(command)
    cfg = _defaults(schema)
    path = getattr(args, "config", None)
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{p}: top level must be an object")
        cfg.update(loaded)
    for key in schema["properties"]:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "config"
        raise UsageError(f"{where}: {exc.message}") from None
    return cfg


def _jobs(cfg) -> int:
    return int(cfg.get("jobs") or os.cpu_count() or 1)


def _write(path, text: str):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# --------------------------------------------------------------------------- commands


def cmd_estimate(cfg: dict) -> int:
    from .estimators import (
        InferenceConfig,
        att_total,
        datt_level,
        datt_overall,
        naive_dr_did,
        rcs_datt_hat,
        satt_hat,
        satt_overall,
        write_scores_csv,
    )
    from .nuisance.fit import CellModels, LearnerConfig, rcs_fit, spillover_fit

    keys = ("learner", "L", "H", "poly_degree", "epochs", "lr", "seed", "eps_clip", "ridge", "aggregators")
    try:
        learner = LearnerConfig(**{k: cfg[k] for k in keys})
        inf = InferenceConfig(cfg["gamma"], cfg["eps_trim"], cfg["bandwidth"], cfg["level"])
        emap = ExposureMap(cfg["exposure"], cfg["cap"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rcs = cfg["format"] == "rcs"
    data = (load_rcs if rcs else load_panel)(cfg["nodes"], cfg["edges"])
    if rcs and (cfg["estimand"] != "datt" or cfg["g"] is None):
        raise UsageError("repeated cross-sections support --estimand datt with an explicit --g")
    G = exposure_vector(data.graph, data.D, emap)
    if cfg["g"] is not None and cfg["g"] not in emap.levels:
        raise UsageError(f"--g {cfg['g']} is not a level of the {emap.kind} mapping {list(emap.levels)}")

    if cfg["bandwidth"] is None:
        try:  # warms the path-length cache used by the bandwidth rule
            average_path_length(data.graph, _jobs(cfg))
        except ValueError:
            pass

    # estimation stage: failures here exit with status 1
    try:
        models = CellModels(data, G, learner)
        est, g, d = cfg["estimand"], cfg["g"], cfg["d"]
        D, Gv = data.D, G.G
        if rcs:
            report = rcs_datt_hat(data, Gv, g, rcs_fit(models, g), inf)
        elif est == "datt":
            report = datt_overall(data, Gv, models, inf) if g is None else datt_level(data, Gv, g, models.nuisance(g), inf)
        elif est == "satt":
            if g is None:
                levels = sorted(x for x in set(Gv[D == 1].tolist()) if x != 0)
                report = satt_overall(data, Gv, {x: spillover_fit(models, d, x) for x in levels}, d, inf)
            else:
                report = satt_hat(data, Gv, g, spillover_fit(models, d, g), inf)
        elif est == "att":
            fits = {x: models.nuisance(x) for x in sorted(set(Gv[D == 1].tolist()))}
            levels = sorted(x for x in fits if x != 0)
            report = att_total(data, Gv, fits, {x: spillover_fit(models, 0, x) for x in levels}, inf)
        else:
            report = naive_dr_did(data, learner, inf)
    except (NetDidError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, DataError):
            raise
        print(f"netdid estimate: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    report.learner = learner.to_dict()
    out = report.to_dict()
    out["exposure"] = emap.to_config()
    out["inputs"] = {"nodes": str(cfg["nodes"]), "edges": str(cfg["edges"]), "format": cfg["format"]}
    print(report.summary())
    for k, v in report.components.items():
        print(f"  {k}: {v:.4f}")
    for note in report.notes:
        print(f"  note: {note}")
    _write(cfg["out"], json.dumps(out, indent=2) + "\n")
    if cfg["scores"]:
        write_scores_csv(report, cfg["scores"], data.ids)
    return EXIT_OK


def _dgp_config(cfg: dict, seed_key: str):
    from .simulate import DgpConfig

    try:
        return DgpConfig(kind=cfg["dgp"], n=cfg["n"], seed=cfg[seed_key], coefficients=cfg["coefficients"],
                         peer_outcome=cfg["peer_outcome"], exposure={"kind": cfg["exposure"], "cap": cfg["cap"]})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(cfg: dict) -> int:
    from .simulate import potential_outcome_effects, simulate

    dcfg = _dgp_config(cfg, "seed")
    try:
        sim = simulate(dcfg)
    except NetDidError as exc:
        print(f"netdid simulate: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_panel(sim.data, out / "nodes.csv", out / "edges.csv")
    G = sim.G.G
    truth = {
        "config": dcfg.to_dict(),
        "n": sim.data.n,
        "n_treated": int(sim.data.D.sum()),
        "exposure_counts": {str(g): int((G == g).sum()) for g in sim.levels},
        "effects": potential_outcome_effects(sim),
        "diagnostics": {k: v for k, v in sim.diagnostics.items() if isinstance(v, (int, float, str, bool))},
    }
    _write(out / "truth.json", json.dumps(truth, indent=2, sort_keys=True) + "\n")
    eff = ", ".join(f"{k}={v:.4f}" for k, v in truth["effects"].items())
    print(f"wrote {out / 'nodes.csv'}, {out / 'edges.csv'}, {out / 'truth.json'}: n={sim.data.n}, "
          f"treated={truth['n_treated']}; {eff}")
    return EXIT_OK


def _methods(spec) -> list[dict]:
    if isinstance(spec, list):
        return spec
    out = []
    for name in (s.strip() for s in spec.split(",")):
        if not name:
            continue
        if name not in METHOD_PRESETS:
            raise UsageError(f"unknown method preset {name!r}; choose from {', '.join(METHOD_PRESETS)}")
        out.append(json.loads(json.dumps(METHOD_PRESETS[name])))
    if not out:
        raise UsageError("no methods given")
    return out


def cmd_mc(cfg: dict) -> int:
    from .simulate import McConfig, MethodSpec, run_monte_carlo

    dcfg = _dgp_config(cfg, "base_seed")
    try:
        methods = tuple(MethodSpec.from_dict(m) for m in _methods(cfg["methods"]))
        mc = McConfig(dcfg, methods, reps=cfg["reps"], base_seed=cfg["base_seed"], jobs=_jobs(cfg),
                      gamma=cfg["gamma"], eps_trim=cfg["eps_trim"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    def progress(k, total):
        print(f"\rreplication {k}/{total}", end="", file=sys.stderr, flush=True)

    try:
        rep = run_monte_carlo(mc, progress if sys.stderr.isatty() else None)
    except NetDidError as exc:
        print(f"netdid mc: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    if sys.stderr.isatty():
        print(file=sys.stderr)
    _write(cfg["out"], rep.to_json() + "\n")
    _write(cfg["rows_csv"], rep.rows_csv())
    _write(cfg["table"], rep.summary_table())
    print(rep.summary_table(), end="")
    return EXIT_OK


def _node_ids(path) -> dict[str, int]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"nodes file not found: {p}")
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{p}: empty file")
    ids = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not row[0].strip():
            continue
        key = row[0].strip()
        if key in ids:
            raise DataError(f"{p}: row {lineno}, column {rows[0][0]}: duplicate id {key!r}")
        ids[key] = len(ids)
    return ids


def cmd_graph_stats(cfg: dict) -> int:
    if cfg["rgg_n"] is not None:
        if cfg["edges"]:
            raise UsageError("give either --edges or --rgg-n, not both")
        g, _ = random_geometric_graph(cfg["rgg_n"], seed=cfg["seed"])
        source = f"rgg(n={cfg['rgg_n']}, seed={cfg['seed']})"
    else:
        if not cfg["edges"]:
            raise UsageError("graph-stats needs --edges or --rgg-n")
        p = Path(cfg["edges"])
        if not p.exists():
            raise FileNotFoundError(f"edges file not found: {p}")
        ids = _node_ids(cfg["nodes"]) if cfg["nodes"] else None
        try:
            g, _ = read_edges_csv(p, ids)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        if ids is not None and g.n < len(ids):
            g = build_from_edges(len(ids), list(g.edges()))
        source = str(p)
    stats = graph_stats(g, _jobs(cfg))
    B, branch, _ = bandwidth_details(g, cfg["gamma"])
    stats.update({"bandwidth": B, "bandwidth_branch": branch, "gamma": cfg["gamma"], "source": source})
    text = json.dumps(stats, indent=2)
    _write(cfg["out"], text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "mc": cmd_mc, "graph-stats": cmd_graph_stats}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cmd = args.command
    try:
        cfg = resolve_config(cmd, args)
        return COMMANDS[cmd](cfg)
    except (UsageError, DataError, OSError, ValueError) as exc:
        print(f"netdid {cmd}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NetDidError as exc:
        print(f"netdid {cmd}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
