"""Command-line interface.

Every command writes a ``manifest.json`` next to its outputs; ``rerun``
replays a manifest and reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import io as mio
from .fit import FitConfig, FitResult, fit_model
from .initialization import initial_state
from .metrics import summarize_fit
from .preprocess import ego_extract, log2_round_transform
from .selection import select_k
from .simulate import SimSpec, scenario_spec, simulate_mlpcm, simulate_poislpcm
from .types import Hyperparams, Network, ValidationError, point_estimates

__all__ = ["main", "build_parser", "load_sim_spec", "load_hyper"]

MODELS = ("mlpcm", "poislpcm")


class UsageError(Exception):
    """Bad input from the command line; reported with exit status 2."""


# --- input helpers ------------------------------------------------------------

def load_sim_spec(path: Path, seed: int) -> SimSpec:
    """Read a simulation spec.

    Either ``{"scenario": 1 | 2, "n_nodes": N}`` or explicit fields with 1-based
    labels ``z``.
    """
    data = mio.read_json(path)
    if "scenario" in data:
        extra = set(data) - {"scenario", "n_nodes"}
        if extra:
            raise UsageError(f"unexpected keys with 'scenario': {sorted(extra)}")
        return scenario_spec(int(data["scenario"]), seed, int(data.get("n_nodes", 100)))
    known = {"n_nodes", "d", "k", "beta", "mu", "tau", "gamma", "z", "pi"}
    extra = set(data) - known
    if extra:
        raise UsageError(f"unknown spec keys: {sorted(extra)}")
    z = data.get("z")
    return SimSpec(
        n_nodes=int(data["n_nodes"]), d=int(data["d"]), k=int(data["k"]), beta=float(data["beta"]),
        mu=np.array(data["mu"], dtype=float), tau=np.array(data["tau"], dtype=float),
        gamma=None if data.get("gamma") is None else np.array(data["gamma"], dtype=float),
        z=None if z is None else np.array(z, dtype=np.int64) - 1,
        pi=None if data.get("pi") is None else np.array(data["pi"], dtype=float),
        rng_seed=seed,
    )


def load_hyper(path: Optional[str], k: Optional[int]) -> Hyperparams:
    data = {} if path is None else dict(mio.read_json(path))
    if k is not None:
        data["k"] = k
        if isinstance(data.get("delta"), list) and len(data["delta"]) != k:
            raise UsageError("delta length does not match --k")
    return Hyperparams.from_dict(data)


def _fit_config(args) -> FitConfig:
    return FitConfig(tol=args.tol, max_iterations=args.max_iterations, rng_seed=args.seed,
                     parallel_dyads=args.parallel_dyads)


def _network_input(args) -> Network:
    return mio.read_network(args.network, args.format)


def _manifest_input(args, path: str) -> Dict[str, str]:
    resolved = Path(path).resolve()
    return {"input_path": str(resolved), "input_sha256": mio.file_sha256(resolved)}


# --- output writers ---------------------------------------------------------------

def _write_fit_outputs(out: Path, net: Network, result: FitResult, emit_overt: bool) -> List[str]:
    state = result.state
    est = point_estimates(state)
    labels = net.labels()
    d, k = state.d, state.k
    written = ["state.json", "trace.csv", "estimates.csv", "edges.csv"]
    mio.write_json(out / "state.json", {
        "model": result.model,
        "iterations": result.iterations,
        "converged": result.converged,
        "elbo": result.trace[-1],
        "state": mio.state_to_dict(state),
    })
    mio.write_csv(out / "trace.csv", ["iteration", "elbo"], enumerate(result.trace))
    header = (["node"] + [f"u{a + 1}" for a in range(d)] + ["cluster"]
              + [f"pi{g + 1}" for g in range(k)] + ["sigma2"])
    if result.model == "mlpcm":
        header.append("gamma_inv")
    rows = []
    for i in range(state.n):
        row = [labels[i]] + [float(x) for x in est.u_hat[:, i]] + [int(est.z_hat[i]) + 1]
        row += [float(p) for p in state.pi_tilde[:, i]] + [float(state.sigma2_tilde[i])]
        if result.model == "mlpcm":
            row.append(float(est.gamma_inv_hat[i]))
        rows.append(row)
    mio.write_csv(out / "estimates.csv", header, rows)
    y = net.weights
    mio.write_csv(out / "edges.csv", ["sender", "receiver", "weight"],
                  [(labels[i], labels[j], int(y[i, j])) for i, j in zip(*np.nonzero(y))])
    if emit_overt and result.model == "mlpcm":
        vh = ["sender", "receiver"] + [f"v{a + 1}" for a in range(d)] + ["varphi2"]
        vrows = [[labels[i], labels[j]] + [float(x) for x in state.v_tilde[:, i, j]]
                 + [float(state.varphi2_tilde[i, j])]
                 for i in range(state.n) for j in range(state.n) if i != j]
        mio.write_csv(out / "overt.csv", vh, vrows)
        written.append("overt.csv")
    return written


def _write_truth_nodes(path: Path, net: Network, truth) -> None:
    """Plot data for the generating configuration: covert positions, labels and 1/gamma."""
    d, n = truth.u.shape
    header = ["node"] + [f"u{a + 1}" for a in range(d)] + ["cluster", "gamma_inv"]
    labels = net.labels()
    rows = [[labels[i]] + [float(x) for x in truth.u[:, i]] + [int(truth.z[i]) + 1]
            + [None if truth.gamma is None else float(1.0 / truth.gamma[i])] for i in range(n)]
    mio.write_csv(path, header, rows)


def _finish(out: Path, manifest: mio.RunManifest, outputs: List[str]) -> None:
    manifest.outputs = sorted(outputs + ["manifest.json"])
    manifest.version = __version__
    manifest.write(out / "manifest.json")


def _manifest_path(out_file: Path) -> Path:
    return out_file.with_name(out_file.name + ".manifest.json")


def _finish_file(out_file: Path, manifest: mio.RunManifest) -> None:
    """Manifest for a command whose output is a single file."""
    manifest.outputs = [out_file.name]
    manifest.version = __version__
    manifest.write(_manifest_path(out_file))


# --- commands ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = load_sim_spec(Path(args.spec), args.seed)
    sim = simulate_mlpcm if args.model == "mlpcm" else simulate_poislpcm
    net, truth = sim(spec)
    mio.write_network(net, out / "network.csv", "edge_list")
    mio.write_json(out / "truth.json", mio.truth_to_dict(truth))
    _write_truth_nodes(out / "truth_nodes.csv", net, truth)
    manifest = mio.RunManifest(command="simulate", model=args.model, seed=args.seed,
                               **_manifest_input(args, args.spec))
    _finish(out, manifest, ["network.csv", "truth.json", "truth_nodes.csv"])
    print(f"simulated {net.n_nodes} nodes, total weight {int(net.weights.sum())} -> {out}")
    return 0


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = _network_input(args)
    hyper = load_hyper(args.hyper, args.k)
    config = _fit_config(args)
    init = initial_state(net, hyper, seed=args.seed)
    result = fit_model(args.model, net, hyper, init, config)
    outputs = _write_fit_outputs(out, net, result, args.emit_overt)
    manifest = mio.RunManifest(
        command="fit", model=args.model, hyperparams=hyper.to_dict(), fit_config=config.to_dict(),
        seed=args.seed, options={"format": args.format, "emit_overt": bool(args.emit_overt)},
        **_manifest_input(args, args.network),
    )
    _finish(out, manifest, outputs)
    status = "converged" if result.converged else "stopped at max_iterations"
    print(f"{args.model}: {status} after {result.iterations} sweeps, ELBO {result.trace[-1]:.4f}")
    return 0


def cmd_select_k(args) -> int:
    if args.k_min < 1 or args.k_max < args.k_min:
        raise UsageError("need 1 <= --k-min <= --k-max")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = _network_input(args)
    hyper = load_hyper(args.hyper, args.k_min)
    config = _fit_config(args)
    best, results = select_k(net, hyper, range(args.k_min, args.k_max + 1), config, args.model,
                             seed=args.seed)
    rows = [(k, p.value, p.term_likelihood, p.term_overt, p.term_covert, p.term_allocation,
             f.trace[-1], f.iterations, int(f.converged)) for k, p, f in results]
    mio.write_csv(out / "picl.csv", ["k", "picl", "likelihood", "overt", "covert", "allocation",
                                     "elbo", "iterations", "converged"], rows)
    mio.write_json(out / "best_k.json", {"best_k": best,
                                         "picl": {str(k): p.value for k, p, _ in results},
                                         "tau_star": {str(k): p.tau_star for k, p, _ in results}})
    best_fit = next(f for k, _, f in results if k == best)
    best_dir = out / "best"
    best_dir.mkdir(exist_ok=True)
    outputs = ["picl.csv", "best_k.json"]
    outputs += [f"best/{name}" for name in _write_fit_outputs(best_dir, net, best_fit,
                                                              args.emit_overt)]
    manifest = mio.RunManifest(
        command="select-k", model=args.model, hyperparams=hyper.to_dict(),
        fit_config=config.to_dict(), seed=args.seed,
        options={"format": args.format, "k_min": args.k_min, "k_max": args.k_max,
                 "emit_overt": bool(args.emit_overt)},
        **_manifest_input(args, args.network),
    )
    _finish(out, manifest, outputs)
    for k, p, _ in results:
        print(f"K={k}: PICL {p.value:.4f}{'  <- best' if k == best else ''}")
    return 0


def cmd_evaluate(args) -> int:
    fit_dir, truth_dir = Path(args.fit), Path(args.truth)
    saved = mio.read_json(fit_dir / "state.json")
    state = mio.state_from_dict(saved["state"])
    truth = mio.truth_from_dict(mio.read_json(truth_dir / "truth.json"))
    if truth.u.shape != state.u_tilde.shape:
        raise UsageError("fit and truth disagree on the number of nodes or dimensions")
    summary = summarize_fit(state, truth, saved["model"]).to_dict()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        mio.write_json(out, summary)
        manifest = mio.RunManifest(
            command="evaluate", model=saved["model"],
            options={"fit": str(fit_dir.resolve()), "truth": str(truth_dir.resolve())},
            **_manifest_input(args, str(fit_dir / "state.json")),
        )
        _finish_file(out, manifest)
    else:
        sys.stdout.write(mio.dumps_json(summary))
    return 0


def cmd_preprocess(args) -> int:
    net = mio.read_network(args.input, args.format)
    if args.ego is not None:
        net = ego_extract(net, args.ego)
    if args.log2_transform:
        net = log2_round_transform(net)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mio.write_network(net, out, args.out_format)
    manifest = mio.RunManifest(
        command="preprocess",
        options={"format": args.format, "out_format": args.out_format, "ego": args.ego,
                 "log2_transform": bool(args.log2_transform)},
        **_manifest_input(args, args.input),
    )
    _finish_file(out, manifest)
    print(f"wrote {net.n_nodes} nodes to {out}")
    return 0


def cmd_rerun(args) -> int:
    manifest = mio.RunManifest.read(args.manifest)
    out = args.out or str(Path(args.manifest).resolve().parent)
    if manifest.command in ("preprocess", "evaluate"):
        return _rerun_file_command(manifest, Path(out))
    if manifest.input_path is None:
        raise UsageError("manifest has no input path")
    if mio.file_sha256(manifest.input_path) != manifest.input_sha256:
        raise UsageError(f"input {manifest.input_path} changed since the manifest was written")
    argv = [manifest.command]
    if manifest.command == "simulate":
        argv += ["--model", manifest.model, "--spec", manifest.input_path,
                 "--seed", str(manifest.seed), "--out", out]
    elif manifest.command in ("fit", "select-k"):
        hyper_path = Path(out) / "_hyper.json"
        Path(out).mkdir(parents=True, exist_ok=True)
        mio.write_json(hyper_path, manifest.hyperparams)
        cfg = manifest.fit_config
        opts = manifest.options
        argv += ["--model", manifest.model, "--network", manifest.input_path,
                 "--format", opts["format"], "--hyper", str(hyper_path),
                 "--tol", repr(float(cfg["tol"])), "--max-iterations", str(cfg["max_iterations"]),
                 "--seed", str(manifest.seed), "--out", out]
        if opts.get("emit_overt"):
            argv.append("--emit-overt")
        if cfg.get("parallel_dyads"):
            argv.append("--parallel-dyads")
        if manifest.command == "select-k":
            argv += ["--k-min", str(opts["k_min"]), "--k-max", str(opts["k_max"])]
        try:
            return main(argv)
        finally:
            hyper_path.unlink(missing_ok=True)
    else:
        raise UsageError(f"cannot rerun command {manifest.command!r}")
    return main(argv)


def _rerun_file_command(manifest: mio.RunManifest, out_dir: Path) -> int:
    target = str(out_dir / manifest.outputs[0])
    opts = manifest.options
    if manifest.command == "preprocess":
        if mio.file_sha256(manifest.input_path) != manifest.input_sha256:
            raise UsageError(f"input {manifest.input_path} changed since the manifest was written")
        argv = ["preprocess", "--in", manifest.input_path, "--format", opts["format"],
                "--out-format", opts["out_format"], "--out", target]
        if opts.get("ego") is not None:
            argv += ["--ego", opts["ego"]]
        if opts.get("log2_transform"):
            argv.append("--log2-transform")
    else:
        argv = ["evaluate", "--fit", opts["fit"], "--truth", opts["truth"], "--out", target]
    return main(argv)


# --- parser -----------------------------------------------------------------------

def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODELS, default="mlpcm")
    p.add_argument("--network", required=True, help="network file")
    p.add_argument("--format", choices=mio.FORMATS, default="edge_list")
    p.add_argument("--hyper", help="JSON file of hyperparameters (defaults if omitted)")
    p.add_argument("--tol", type=float, default=0.01, help="stop when one sweep gains less")
    p.add_argument("--max-iterations", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0, help="k-means seed for the starting point")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--emit-overt", action="store_true", help="also write per-dyad overt positions")
    p.add_argument("--parallel-dyads", action="store_true",
                   help="accepted for compatibility; dyad blocks are always updated together")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlpcm", description="Latent position cluster models "
                                     "with overt and covert positions for weighted networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a network and its latent configuration")
    p.add_argument("--model", choices=MODELS, default="mlpcm")
    p.add_argument("--spec", required=True, help="JSON simulation spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="variational fit for a fixed number of clusters")
    _add_fit_flags(p)
    p.add_argument("--k", type=int, help="number of clusters (overrides the hyper file)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="fit a range of K and rank them by PICL")
    _add_fit_flags(p)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("evaluate", help="compare a fit with the simulated truth")
    p.add_argument("--fit", required=True, help="output directory of 'fit'")
    p.add_argument("--truth", required=True, help="output directory of 'simulate'")
    p.add_argument("--out", help="summary JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("preprocess", help="ego extraction and log2 weight compression")
    p.add_argument("--in", dest="input", required=True, help="input network file")
    p.add_argument("--format", choices=mio.FORMATS, default="edge_list")
    p.add_argument("--out-format", choices=mio.FORMATS, default="edge_list")
    p.add_argument("--ego", help="label of the ego node")
    p.add_argument("--log2-transform", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("rerun", help="replay a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory (defaults to the manifest's directory)")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler: Callable = args.func
    try:
        if getattr(args, "k", None) is not None and args.k < 1:
            raise UsageError("--k must be positive")
        return handler(args)
    except UsageError as exc:
        print(f"mlpcm {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"mlpcm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
