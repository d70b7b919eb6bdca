"""Command-line interface: ``vast fit | simulate | forecast | girf``.

Every command writes ``<out>.manifest.json`` with the resolved configuration,
input hashes, library version and wall-clock time. Passing a manifest (or any
JSON mapping of option names to values) as ``--config`` reruns with those
settings; explicit flags override it.

Exit codes: 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .core import ConfigError, DataError, DrawFileError, ModelConfig, NumericalError, Posterior
from .data import build_lag_matrix, locate, read_panel
from .predict import VARIANTS, monte_carlo_study, predict_ast, recursive_forecast, simulate_predictive
from .sampler import ChainSettings, run_chain_ast, run_chain_vast
from .structural import GirfSpec, girf, ordering_from_classes

log = logging.getLogger("vast")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4

# defaults for every option; argparse itself uses SUPPRESS so we can tell
# explicit flags from config-file values
DEFAULTS = {
    "common": {"seed": 0, "out": "vast_run", "verbose": False, "config": None},
    "model": {
        "J": 10, "P": 1, "phi": 1.0, "a_sigma": 0.01, "b_sigma": 0.01, "a_nu": 0.01, "b_nu": 0.01,
        "sigma2_mu": 10.0, "a_Sigma": None, "S_Sigma_scale": 0.01, "fix_nu": None, "fix_mu": None,
        "fix_mu_mean": False,
    },
    "chain": {"burn": 2000, "save": 2000, "thin": 1},
    "panel": {"data": None, "meta": None, "series": None, "start": None, "end": None},
    "fit": {"model": "vast", "target": None, "no_standardize": False},
    "simulate": {"reps": 10, "J_grid": "1,5,10,15", "baseline": "estimate-both", "variants": ",".join(VARIANTS),
                 "T": 300, "workers": 1},
    "forecast": {"draws": None, "H": 1, "paths": 1, "origin": None, "recursive": False, "zero_sigma": False,
                 "focus": None},
    "girf": {"draws": None, "shock": None, "sizes": "1,5", "signs": "both", "w": None, "H": 20,
             "n_shock_draws": 20, "stride": 1},
}
SECTIONS = {
    "fit": ("common", "model", "chain", "panel", "fit"),
    "simulate": ("common", "model", "chain", "simulate"),
    "forecast": ("common", "model", "chain", "panel", "forecast"),
    "girf": ("common", "panel", "girf"),
}


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file of option values (a previous manifest works)")
    p.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    p.add_argument("--out", default=S, help="output path prefix (default vast_run)")
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def _add_model(p, with_J=True):
    S = argparse.SUPPRESS
    g = p.add_argument_group("model")
    if with_J:
        g.add_argument("--J", type=int, default=S, help="number of base learners (default 10)")
    g.add_argument("--P", type=int, default=S, help="lag order (default 1)")
    g.add_argument("--phi", type=float, default=S, help="prior scale of the location coefficients")
    for name in ("a-sigma", "b-sigma", "a-nu", "b-nu", "sigma2-mu", "a-Sigma", "S-Sigma-scale"):
        g.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float, default=S)
    g.add_argument("--fix-nu", type=float, default=S, help="hold every nu_j at this value")
    g.add_argument("--fix-mu", type=float, default=S, help="hold every mu_j at this value")
    g.add_argument("--fix-mu-mean", action="store_true", default=S,
                   help="hold mu_j at the mean of the selected covariate")


def _add_chain(p):
    S = argparse.SUPPRESS
    g = p.add_argument_group("chain")
    g.add_argument("--burn", type=int, default=S, help="burn-in sweeps (default 2000)")
    g.add_argument("--save", type=int, default=S, help="retained draws (default 2000)")
    g.add_argument("--thin", type=int, default=S)


def _add_panel(p):
    S = argparse.SUPPRESS
    g = p.add_argument_group("data")
    g.add_argument("--data", default=S, help="CSV of levels: dates in the first column, one series per column")
    g.add_argument("--meta", default=S, help="CSV with columns mnemonic, tcode, class")
    g.add_argument("--series", default=S, help="comma-separated subset of series")
    g.add_argument("--start", default=S, help="first date, e.g. 1965Q1")
    g.add_argument("--end", default=S, help="last date")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="vast", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the MCMC sampler and write a draw file")
    _add_common(p), _add_model(p), _add_chain(p), _add_panel(p)
    p.add_argument("--model", choices=("vast", "ast"), default=S)
    p.add_argument("--target", default=S, help="response series for --model ast")
    p.add_argument("--no-standardize", action="store_true", default=S)

    p = sub.add_parser("simulate", help="Monte Carlo study on the synthetic DGP")
    _add_common(p), _add_model(p, with_J=False), _add_chain(p)
    p.add_argument("--reps", type=int, default=S, help="replications (default 10)")
    p.add_argument("--J", "--J-grid", dest="J_grid", default=S, help="comma-separated J values (default 1,5,10,15)")
    p.add_argument("--baseline", default=S, help="variant the others are compared with")
    p.add_argument("--variants", default=S, help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--T", type=int, default=S, help="simulated sample length (default 300)")
    p.add_argument("--workers", type=int, default=S, help="parallel replications (default 1)")

    p = sub.add_parser("forecast", help="predictive simulation and evaluation")
    _add_common(p), _add_model(p), _add_chain(p), _add_panel(p)
    p.add_argument("--draws", default=S, help="draw file written by fit")
    p.add_argument("--H", type=int, default=S, help="forecast horizon (default 1)")
    p.add_argument("--paths", type=int, default=S, help="paths per posterior draw (default 1)")
    p.add_argument("--origin", default=S, help="last date of the conditioning sample (default: end of data)")
    p.add_argument("--recursive", action="store_true", default=S,
                   help="refit on an expanding window from --origin to the end of the data")
    p.add_argument("--focus", default=S, help="comma-separated series for the joint LPL")
    p.add_argument("--zero-sigma", action="store_true", default=S, help=argparse.SUPPRESS)

    p = sub.add_parser("girf", help="generalised impulse responses")
    _add_common(p), _add_panel(p)
    p.add_argument("--draws", default=S, help="draw file written by fit")
    p.add_argument("--shock", default=S, help="name of the shocked series")
    p.add_argument("--sizes", default=S, help="comma-separated shock sizes in s.d. (default 1,5)")
    p.add_argument("--signs", choices=("both", "pos", "neg"), default=S)
    p.add_argument("--w", type=float, default=S, help="a single signed shock size; overrides --sizes/--signs")
    p.add_argument("--H", type=int, default=S, help="last response horizon (default 20)")
    p.add_argument("--n-shock-draws", type=int, default=S)
    p.add_argument("--stride", type=int, default=S, help="use every stride-th historical state")
    return parser


def resolve(command: str, explicit: dict) -> dict:
    """Merge defaults, then the config file, then explicit flags."""
    opts = {}
    for sec in SECTIONS[command]:
        opts.update(DEFAULTS[sec])
    cfg_path = explicit.get("config")
    if cfg_path:
        try:
            loaded = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {cfg_path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{cfg_path}: expected a JSON object")
        if "config" in loaded and isinstance(loaded["config"], dict):
            loaded = loaded["config"]
        unknown = sorted(set(loaded) - set(opts))
        if unknown:
            raise ConfigError(f"{cfg_path}: unknown options {', '.join(unknown)}")
        opts.update(loaded)
    opts.update({k: v for k, v in explicit.items() if k != "command"})
    opts["config"] = cfg_path
    return opts


def model_config(o: dict, M: int = 1) -> ModelConfig:
    return ModelConfig(
        J=o["J"], P=o["P"], M=M, phi=o["phi"], a_sigma=o["a_sigma"], b_sigma=o["b_sigma"], a_nu=o["a_nu"],
        b_nu=o["b_nu"], sigma2_mu=o["sigma2_mu"], a_Sigma=o["a_Sigma"], S_Sigma_scale=o["S_Sigma_scale"],
        fix_nu=o["fix_nu"], fix_mu=o["fix_mu"], fix_mu_to_mean=bool(o["fix_mu_mean"]),
    )


def chain_settings(o: dict) -> ChainSettings:
    return ChainSettings(seed=o["seed"], n_burn=o["burn"], n_save=o["save"], thin=o["thin"])


def _csv(s, cast=str):
    if s is None:
        return None
    if isinstance(s, (list, tuple)):
        return [cast(x) for x in s]
    return [cast(x.strip()) for x in str(s).split(",") if x.strip()]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_panel(o: dict):
    if not o.get("data"):
        raise ConfigError("--data is required")
    if not o.get("meta"):
        raise ConfigError("--meta is required")
    for key in ("data", "meta"):
        if not Path(o[key]).is_file():
            raise DataError(f"{key} file not found: {o[key]}")
    return read_panel(o["data"], o["meta"], series=_csv(o.get("series")), start=o.get("start"), end=o.get("end"))


def _load_draws(path) -> Posterior:
    if not path:
        raise ConfigError("--draws is required")
    if not Path(path).is_file():
        raise DataError(f"draw file not found: {path}")
    return Posterior.load(path)


def _panel_for_draws(post: Posterior, panel):
    names = post.meta.get("names")
    if names is None:
        return panel
    missing = [n for n in names if n not in panel.names]
    if missing:
        raise DataError(f"series in the draw file but not in the data: {', '.join(missing)}")
    return panel.select(names)


# -- commands ---------------------------------------------------------------------


def cmd_fit(o: dict) -> dict:
    panel = _load_panel(o)
    settings = chain_settings(o)
    standardize = not o["no_standardize"]
    if o["model"] == "ast":
        if not o.get("target"):
            raise ConfigError("--model ast needs --target")
        if o["target"] not in panel.names:
            raise DataError(f"target series {o['target']} not in the data")
        cfg = model_config(o, M=1)
        panel.check_size(cfg.P)
        X, Yl = build_lag_matrix(panel.values, cfg.P)
        y = Yl[:, panel.names.index(o["target"])]
        post = run_chain_ast(y, X, cfg, settings, standardize_data=standardize)
        post.meta.update(target=o["target"], panel_names=list(panel.names),
                         names=[o["target"]])
    else:
        cfg = model_config(o, M=panel.M)
        panel.check_size(cfg.P)
        post = run_chain_vast(panel.values, cfg, settings, standardize_data=standardize, names=panel.names)
    post.meta.update(classes=list(panel.classes), tcodes=list(panel.tcodes),
                     first_date=str(panel.index[0]), last_date=str(panel.index[-1]))
    out = Path(o["out"])
    draws = out.with_name(out.name + ".draws")
    post.save(draws)
    acc, trace = post.diagnostics.write(out)
    log.info("wrote %s", draws)
    return {"outputs": [str(draws), str(acc), str(trace)], "inputs": [o["data"], o["meta"]]}


def cmd_simulate(o: dict) -> dict:
    variants = _csv(o["variants"])
    if o["baseline"] not in variants:
        raise ConfigError(f"baseline {o['baseline']!r} is not among the variants {variants}")
    from .data import DgpSpec
    base = model_config(o)
    res = monte_carlo_study(
        reps=o["reps"], J_grid=_csv(o["J_grid"], int), variants=tuple(variants), settings=chain_settings(o),
        seed=o["seed"], base_cfg=base, dgp=DgpSpec(T=o["T"]), workers=o["workers"],
    )
    out = Path(o["out"])
    paths = []
    for suffix, frame in (("table", res.table(o["baseline"])), ("rmse", res.mean_rmse()), ("lpl", res.mean_lpl())):
        p = out.with_name(f"{out.name}.{suffix}.tsv")
        frame.to_csv(p, sep="\t", float_format="%.6f", index_label="variant")
        paths.append(str(p))
    print(res.table(o["baseline"]).to_string(float_format=lambda v: f"{v:.3f}"))
    return {"outputs": paths, "inputs": []}


def cmd_forecast(o: dict) -> dict:
    post = _load_draws(o["draws"])
    panel = _load_panel(o)
    out = Path(o["out"])
    if o["recursive"]:
        if post.meta.get("kind") != "vast":
            raise ConfigError("--recursive needs a VAST draw file")
        panel = _panel_for_draws(post, panel)
        if not o.get("origin"):
            raise ConfigError("--recursive needs --origin (the first forecast origin date)")
        start = locate(panel.index, o["origin"]) + 1
        # the draw file's model, with explicit model flags taking precedence
        cfg = ModelConfig.from_dict(post.meta["config"]).with_(**_model_overrides(o))
        settings = chain_settings(o)
        focus = _csv(o.get("focus"))
        focus_idx = [panel.names.index(f) for f in focus] if focus else None
        res = recursive_forecast(panel.values, cfg, settings, start, H=o["H"], n_paths_per_draw=o["paths"],
                                 focus=focus_idx, names=panel.names)
        rows = []
        for i, t in enumerate(res.origins):
            for h in range(o["H"]):
                for m, name in enumerate(panel.names):
                    rows.append({"origin": str(panel.index[t - 1]), "horizon": h + 1, "variable": name,
                                 "median": res.medians[i, h, m], "variance": res.variances[i, h, m],
                                 "actual": res.actuals[i, h, m]})
        p1 = out.with_name(out.name + ".forecast.tsv")
        pd.DataFrame(rows).to_csv(p1, sep="\t", index=False, float_format="%.8g")
        outputs = [str(p1)]
        if np.isfinite(res.actuals[:, 0]).any():
            mt = res.metrics(0)
            mt.insert(0, "variable", panel.names)
            if res.joint_lpl is not None:
                mt["joint_lpl_focus"] = np.nanmean(res.joint_lpl)
            p2 = out.with_name(out.name + ".metrics.tsv")
            mt.to_csv(p2, sep="\t", index=False, float_format="%.6f")
            outputs.append(str(p2))
            print(mt.to_string(index=False))
        return {"outputs": outputs, "inputs": [o["draws"], o["data"], o["meta"]]}

    if post.meta.get("kind") == "ast":
        if o["H"] != 1:
            raise ConfigError("AST draw files support one-step forecasts only (H=1)")
        names = post.meta.get("panel_names") or panel.names
        panel = panel.select(names)
    else:
        panel = _panel_for_draws(post, panel)
    T = panel.T
    n_hist = T if not o.get("origin") else locate(panel.index, o["origin"]) + 1
    history = panel.values[:n_hist]
    if post.meta.get("kind") == "ast":
        P = int(post.meta.get("P", 1))
        x = history[::-1][:P].reshape(1, -1)
        pred = predict_ast(post, x, o["paths"], seed=o["seed"], zero_sigma=o["zero_sigma"])
        pred.names = post.meta.get("names")
        target_idx = [panel.names.index(post.meta["target"])]
    else:
        pred = simulate_predictive(post, history, o["H"], o["paths"], seed=o["seed"], zero_sigma=o["zero_sigma"])
        target_idx = list(range(panel.M))
    table = pred.summary()
    p1 = out.with_name(out.name + ".forecast.tsv")
    table.to_csv(p1, sep="\t", index=False, float_format="%.8g")
    outputs = [str(p1)]
    k = min(pred.H, T - n_hist)
    if k > 0:
        actual = panel.values[n_hist:n_hist + k][:, target_idx]
        med, var = pred.median()[:k], pred.variance()[:k]
        rows = []
        for h in range(k):
            for m in range(pred.M):
                ok = var[h, m] > 0
                lp = -0.5 * (np.log(2 * np.pi * var[h, m]) + (actual[h, m] - med[h, m]) ** 2 / var[h, m]) if ok else np.nan
                rows.append({"horizon": h + 1, "variable": table["variable"].iloc[m], "actual": actual[h, m],
                             "median": med[h, m], "abs_error": abs(actual[h, m] - med[h, m]), "log_score": lp})
        p2 = out.with_name(out.name + ".metrics.tsv")
        pd.DataFrame(rows).to_csv(p2, sep="\t", index=False, float_format="%.8g")
        outputs.append(str(p2))
    return {"outputs": outputs, "inputs": [o["draws"], o["data"], o["meta"]]}


def _model_overrides(o: dict) -> dict:
    keys = {"J": "J", "P": "P", "phi": "phi", "fix_nu": "fix_nu", "fix_mu": "fix_mu"}
    return {v: o[k] for k, v in keys.items() if k in o.get("_explicit", ())}


def cmd_girf(o: dict) -> dict:
    post = _load_draws(o["draws"])
    if post.M < 2 or post.meta.get("kind") != "vast":
        raise ConfigError("girf needs a VAST draw file with at least two series")
    panel = _panel_for_draws(post, _load_panel(o))
    if not o.get("shock"):
        raise ConfigError("--shock is required")
    if o["shock"] not in panel.names:
        raise ConfigError(f"shock variable {o['shock']} not found among {', '.join(panel.names)}")
    k = panel.names.index(o["shock"])
    ordering = ordering_from_classes(panel.classes, k, panel.names)
    if o.get("w") is not None:
        ws = [float(o["w"])]
    else:
        sizes = _csv(o["sizes"], float)
        signs = {"both": (1, -1), "pos": (1,), "neg": (-1,)}[o["signs"]]
        ws = [s * z for s in signs for z in sizes]
    out = Path(o["out"])
    outputs = []
    for w in ws:
        spec = GirfSpec(shock_index=k, w=w, H=o["H"], n_shock_draws=o["n_shock_draws"],
                        state_subsample=o["stride"], seed=o["seed"])
        res = girf(post, panel.values, spec, ordering)
        tag = ("pos" if w >= 0 else "neg") + f"{abs(w):g}"
        p = res.write(out.with_name(f"{out.name}.girf_{o['shock']}_{tag}.tsv"))
        outputs.append(str(p))
    return {"outputs": outputs, "inputs": [o["draws"], o["data"], o["meta"]],
            "ordering": [panel.names[i] for i in ordering.order]}


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "forecast": cmd_forecast, "girf": cmd_girf}


def write_manifest(command: str, o: dict, info: dict, started: float, argv) -> Path:
    inputs = {str(p): _sha256(p) for p in info.get("inputs", []) if p and Path(p).is_file()}
    config = {k: v for k, v in o.items() if not k.startswith("_") and k != "config"}
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": o.get("seed"),
        "inputs": inputs,
        "outputs": info.get("outputs", []),
        "version": __version__,
        "numpy": np.__version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    for k, v in info.items():
        if k not in ("inputs", "outputs"):
            manifest[k] = v
    out = Path(o["out"])
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    started = time.time()
    try:
        o = resolve(command, args)
        o["_explicit"] = tuple(args)
        logging.basicConfig(level=logging.INFO if o.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        info = COMMANDS[command](o)
        write_manifest(command, o, info, started, argv)
    except ConfigError as exc:
        print(f"vast {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DrawFileError) as exc:
        print(f"vast {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"vast {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
