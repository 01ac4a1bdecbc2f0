"""``robust-deepc`` command line: ``generate-data``, ``run`` and ``verify``.

Exit codes: 0 success, 2 verification or excitation failure, 3 infeasible
closed loop, 4 invalid input.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .controllers import (ControllerConfig, ExcitationError, QuadraticCost, check_excitation,
                          data_stack)
from .controllers.closed_loop import _fmt
from .experiments import (CONTROLLER_KINDS, PRESETS, WORST_CASE_MODES, custom_preset,
                          expand_controllers, generate_dataset, get_preset, run_experiment,
                          verification_report)
from .hankel import build_hankel, is_persistently_exciting
from .lti import DatasetManifest, LtiSystem, Trajectory, required_length

EXIT_OK, EXIT_VERIFY, EXIT_INFEASIBLE, EXIT_INPUT = 0, 2, 3, 4

log = logging.getLogger("robust_deepc")


class InputError(Exception):
    """Bad arguments or unreadable input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default,
                      allow_nan=True)
    Path(path).write_text(text + "\n")


def _common(p):
    p.add_argument("--preset", default="second-order", choices=sorted(PRESETS) + ["custom"])
    p.add_argument("--system", type=Path, help="JSON plant description for --preset custom")
    p.add_argument("--config", type=Path, help="JSON or TOML controller configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, help="prediction horizon n_h")
    p.add_argument("--t-init", type=int, dest="t_init", help="initial window length")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p):
    p.add_argument("--data", type=Path, help="dataset CSV written by generate-data")
    p.add_argument("--length", type=int, help="dataset length when generating inline")
    p.add_argument("--amplitude", type=float, help="input excitation amplitude")
    p.add_argument("--w-amplitude", type=float, dest="w_amplitude",
                   help="disturbance excitation amplitude")


def build_parser():
    parser = _Parser(prog="robust-deepc", description="Robust data-enabled predictive control")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate-data", help="write an excitation dataset and Hankel matrices")
    _common(gen)
    _data_args(gen)

    run = sub.add_parser("run", help="closed-loop runs and plot data")
    _common(run)
    _data_args(run)
    run.add_argument("--steps", type=int)
    run.add_argument("--controller", default="both",
                     choices=list(CONTROLLER_KINDS) + ["both", "all"])
    run.add_argument("--worst-case", dest="worst_case", nargs="?", const="default",
                     choices=list(WORST_CASE_MODES) + ["default"],
                     help="replay worst-case disturbances (preset default when no mode)")

    ver = sub.add_parser("verify", help="lemma, equivalence, dualisation and causality checks")
    _common(ver)
    _data_args(ver)
    return parser


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc


def resolve_preset(args):
    if args.preset == "custom":
        if args.system is None or args.config is None:
            raise InputError("--preset custom needs --system and --config")
        try:
            system = LtiSystem.from_dict(_load_json(args.system, "system"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid system file {args.system}: {exc}") from exc
        base = ControllerConfig(t_init=1, n_h=1)
        preset = custom_preset(system, _load_config(args.config, base))
    else:
        preset = get_preset(args.preset)
        if args.config is not None:
            preset = replace(preset, config=_load_config(args.config, preset.config))
    overrides = {}
    if args.horizon is not None:
        overrides["n_h"] = args.horizon
    if args.t_init is not None:
        overrides["t_init"] = args.t_init
    if overrides:
        try:
            preset = replace(preset, config=preset.config.replace(**overrides))
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    return preset


def _load_config(path, base):
    try:
        return ControllerConfig.from_file(path, base)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid config {path}: {exc}") from exc


def load_or_generate(args, preset):
    """The dataset from ``--data`` or a freshly generated one, plus its manifest."""
    if args.data is not None:
        try:
            traj = Trajectory.from_csv(args.data)
        except (OSError, ValueError, IndexError) as exc:
            raise InputError(f"cannot read dataset {args.data}: {exc}") from exc
        sys_ = preset.system
        if (traj.u.shape[1], traj.w.shape[1], traj.y.shape[1]) != (sys_.n_u, sys_.n_w, sys_.n_y):
            raise InputError(f"dataset {args.data} does not match the plant dimensions")
        if args.length is not None:
            traj = traj.truncated(min(args.length, len(traj)))
        manifest = DatasetManifest(sys_.dims, args.seed, len(traj), float("nan"), float("nan"),
                                   traj.x[0].tolist(), {"source": str(args.data)})
        return traj, manifest
    try:
        return generate_dataset(preset, args.seed, args.length, args.amplitude,
                                args.w_amplitude)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def excitation_report(preset, traj):
    """Persistency of excitation of ``u``, ``w`` and the joint signal at ``L + n_x``."""
    sys_, cfg = preset.system, preset.config
    L, order = cfg.depth, cfg.depth + sys_.n_x
    report = {"depth": L, "order": order, "n_x": sys_.n_x, "length": len(traj),
              "required_length": required_length(sys_.n_u, sys_.n_w, L, sys_.n_x)}
    causes = []
    if len(traj) - order + 1 < 1:
        causes.append(f"{len(traj)} samples cannot form a depth-{order} Hankel matrix")
        report.update(u=False, w=False, joint=False)
    else:
        flags = {"u": is_persistently_exciting(traj.u, order),
                 "w": is_persistently_exciting(traj.w, order),
                 "joint": is_persistently_exciting(np.hstack([traj.u, traj.w]), order)}
        report.update(flags)
        causes += [f"{k} is not persistently exciting of order {order}"
                   for k, ok in flags.items() if not ok]
        try:
            check_excitation(data_stack(traj.u, traj.y, cfg.t_init, cfg.n_h, traj.w))
        except ValueError as exc:
            causes.append(str(exc))
    report["causes"] = causes
    report["verdict"] = not causes
    return report


def cmd_generate_data(args):
    preset = resolve_preset(args)
    traj, manifest = load_or_generate(args, preset)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "dataset.csv")
    report = excitation_report(preset, traj)
    depth = preset.config.depth
    if len(traj) >= depth:
        for sig in "uwy":
            build_hankel(getattr(traj, sig), depth).to_csv(out / f"hankel_{sig}.csv",
                                                           source="dataset.csv")
    payload = dict(manifest.__dict__)
    payload["excitation"] = report
    payload["config"] = preset.config.to_dict()
    write_json(out / "manifest.json", payload)
    if not report["verdict"]:
        log.error("excitation failure: %s", "; ".join(report["causes"]))
        return EXIT_VERIFY
    log.info("dataset of %d samples, persistently exciting of order %d", len(traj),
             report["order"])
    return EXIT_OK


def _plot_columns(result):
    """``t, deepc, mpc, ref, max, min`` columns (suffixed per output when ``n_y > 1``)."""
    preset = result.preset
    deepc = result.logs.get("robust-deepc", result.logs.get("deepc"))
    mpc = result.logs.get("robust-mpc")
    # the time axis of the longest log; a halted controller's tail stays blank
    steps = max(len(log_) for log_ in result.logs.values())
    t = preset.start_time + np.arange(steps)
    n_y = preset.system.n_y
    y_s = preset.config.schedules(preset.system.n_u, n_y, preset.system.n_w)[1]
    lo, hi = y_s.horizon(preset.start_time, steps)
    cost = preset.config.cost
    refs = (cost.reference_horizon(preset.start_time, steps, n_y)
            if isinstance(cost, QuadraticCost) else None)
    header, cols = ["t"], [t]
    for j in range(n_y):
        tag = "" if n_y == 1 else str(j)
        for name, log_ in (("deepc", deepc), ("mpc", mpc)):
            if log_ is not None:
                vals = np.full(steps, np.nan)
                if len(log_):
                    vals[:len(log_)] = log_.y[:, j]
                header.append(name + tag)
                cols.append(vals)
        if refs is not None:
            header.append("ref" + tag)
            cols.append(refs[:, j])
        header += ["max" + tag, "min" + tag]
        cols += [hi[:, j], lo[:, j]]
    return header, cols


def write_plot_data(path, result):
    header, cols = _plot_columns(result)
    lines = [",".join(header)]
    for t, *vals in zip(*cols):
        lines.append(",".join([str(int(t))] + ["" if np.isnan(v) else _fmt(v) for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_run(args):
    preset = resolve_preset(args)
    traj, _ = load_or_generate(args, preset)
    worst = args.worst_case
    if worst == "default":
        worst = preset.default_worst_case
    try:
        result = run_experiment(preset, expand_controllers(args.controller), args.seed,
                                args.steps, worst, traj)
    except ExcitationError as exc:
        log.error("excitation failure: %s", exc)
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "summary.json", {"error": str(exc), "kind": "excitation"})
        return EXIT_VERIFY
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for kind, log_ in result.logs.items():
        log_.to_csv(out / f"{kind}.csv")
    write_plot_data(out / "plot_data.csv", result)
    write_json(out / "summary.json", result.summary)
    for kind, s in result.summary["controllers"].items():
        log.info("%s: %d steps, max violation %.3g", kind, s["steps"], s["max_violation"])
    if "infeasible" in result.summary:
        for kind, info in result.summary["infeasible"].items():
            log.error("%s infeasible at step %s (%s)", kind, info["step"], info["status"])
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_verify(args):
    preset = resolve_preset(args)
    traj, _ = load_or_generate(args, preset)
    report = verification_report(preset, traj, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "report.json", report)
    failed = [k for k, v in report.items() if isinstance(v, dict) and not v.get("verdict", True)]
    if failed:
        log.error("verification failed: %s", ", ".join(failed))
        return EXIT_VERIFY
    log.info("all verdicts true")
    return EXIT_OK


COMMANDS = {"generate-data": cmd_generate_data, "run": cmd_run, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
