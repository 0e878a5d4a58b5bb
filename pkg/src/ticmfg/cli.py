"""Batch CLI: solve, verify, and sweep experiments with reproducible outputs.

Every run resolves an ExperimentConfig (JSON file, overridden by flags),
stamps each artifact with a hash of the semantically relevant fields plus
seed and library versions, and writes JSON/CSV without timestamps so a rerun
with the same config and seed reproduces files byte for byte.  The default
output directory comes from TICMFG_OUTPUT_DIR, falling back to the working
directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .classic_eq import solve_classic, verify_classic
from .consistent_eq import lipschitz_estimate, solve_consistent, verify_consistent
from .mfg_dynamics import FeedbackPolicy, NuGrid, TimePolicy, evaluate_feedback, load_policy, save_policy
from .model import ActionGrid, get_model, horizon_for_tail
from . import nagent


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; flags override config-file fields."""

    model: str = "tracking"
    action_m: int = 101
    nu_k: int = 200
    eps_tail: float = 1e-8
    tol: float = 0.0  # 0 means each command's default
    tie_tol: float = 1e-9
    horizon: int = 0  # 0 means derived from eps_tail
    nu0: tuple = (0.5, 0.5)
    n_list: tuple = (4, 8, 16, 32, 64)
    samples: int = 100_000
    seed: int = 0
    x: int = 0
    init: str = "fixed"
    max_iter: int = 0  # 0 means each command's default
    policy: str = ""
    output_dir: str = ""

    def hash(self) -> str:
        payload = dataclasses.asdict(self)
        payload.pop("output_dir")  # where files land is not semantically relevant
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def out_dir(self) -> Path:
        root = self.output_dir or os.environ.get("TICMFG_OUTPUT_DIR", ".")
        path = Path(root)
        path.mkdir(parents=True, exist_ok=True)
        return path


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise SystemExit(f"error: config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SystemExit(f"error: config file is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise SystemExit("error: config root must be a JSON object")
        for key, value in raw.items():
            if key not in _CONFIG_FIELDS:
                raise SystemExit(f"error: unknown config field '{key}'")
            data[key] = value
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            data[key] = flag
    for key in ("nu0", "n_list"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise SystemExit(f"error: malformed config: {exc}")
    for field in ("eps_tail", "tie_tol"):
        if getattr(cfg, field) <= 0:
            raise SystemExit(f"error: config field '{field}' must be positive")
    if cfg.tol < 0:
        raise SystemExit("error: config field 'tol' must be nonnegative")
    if cfg.samples < 1:
        raise SystemExit("error: config field 'samples' must be >= 1")
    if abs(sum(cfg.nu0) - 1.0) > 1e-9 or min(cfg.nu0) < 0:
        raise SystemExit("error: config field 'nu0' must be a probability vector")
    return cfg


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": {
            "ticmfg": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and (np.isnan(obj) or np.isinf(obj)):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=1) + "\n")
    print(f"wrote {path}")


def write_csv(path: Path, cfg: ExperimentConfig, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()} seed={cfg.seed} ticmfg={__version__}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    print(f"wrote {path}")


def _model(cfg: ExperimentConfig):
    try:
        model = get_model(cfg.model)
    except (KeyError, FileNotFoundError) as exc:
        raise SystemExit(f"error: config field 'model': {exc}")
    if model.action_grid.m != cfg.action_m:
        model = dataclasses.replace(
            model, action_grid=ActionGrid.uniform(model.action_grid.lo, model.action_grid.hi, cfg.action_m)
        )
    return model


def _load_policy(cfg: ExperimentConfig):
    if not cfg.policy:
        raise SystemExit("error: config field 'policy' is required for this command")
    path = Path(cfg.policy)
    if not path.exists():
        raise SystemExit(f"error: config field 'policy': file not found: {path}")
    return load_policy(path)


def cmd_solve_classic(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    tol = cfg.tol or 1e-10
    max_iter = cfg.max_iter or 500
    res = solve_classic(model, np.asarray(cfg.nu0), eps_tail=cfg.eps_tail, tol=tol, max_iter=max_iter, tie_tol=cfg.tie_tol)
    out = cfg.out_dir()
    save_policy(res.policy, out / "classic_policy.json")
    print(f"wrote {out / 'classic_policy.json'}")
    write_json(
        out / "classic_result.json",
        {
            "provenance": provenance(cfg),
            "model": model.name,
            "nu0": list(cfg.nu0),
            "converged": res.converged,
            "iterations": res.iterations,
            "residual": res.residual,
            "certified_epsilon": res.report.certified_epsilon,
            "flow_residual": res.report.flow_residual,
            "worst_point": list(res.worst_point),
            "horizon": res.horizon,
            "tail": res.report.tail,
            "residual_trace": list(res.residual_trace),
        },
    )
    write_csv(
        out / "classic_flow.csv",
        cfg,
        ["t", "mu_0", "mu_1"],
        [(t, float(res.flow.at(t)[0]), float(res.flow.at(t)[1])) for t in range(res.horizon + 1)],
    )
    print(f"solve-classic: residual={res.residual:.3e} converged={res.converged}")
    return 0 if res.converged else 1


def cmd_solve_consistent(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    tol = cfg.tol or 1e-8
    max_iter = cfg.max_iter or 200
    res = solve_consistent(model, nu_grid_k=cfg.nu_k, tol=tol, max_iter=max_iter, tie_tol=cfg.tie_tol)
    out = cfg.out_dir()
    save_policy(res.policy, out / "consistent_policy.json")
    print(f"wrote {out / 'consistent_policy.json'}")
    write_json(
        out / "consistent_result.json",
        {
            "provenance": provenance(cfg),
            "model": model.name,
            "nu_grid_k": cfg.nu_k,
            "converged": res.converged,
            "iterations": res.iterations,
            "update": res.update,
            "residual": res.report.residual,
            "lipschitz": res.lipschitz,
        },
    )
    nodes = res.policy.nu_grid.points[:, 0]
    if res.policy.is_dirac:
        rows = [(float(nodes[k]), float(res.policy.locations[0][k]), float(res.policy.locations[1][k])) for k in range(nodes.size)]
        write_csv(out / "consistent_policy.csv", cfg, ["nu_0", "action_state0", "action_state1"], rows)
    else:
        rows = [
            (float(nodes[k]), float(evaluate_feedback(res.policy, 0, [nodes[k], 1 - nodes[k]]).mean()),
             float(evaluate_feedback(res.policy, 1, [nodes[k], 1 - nodes[k]]).mean()))
            for k in range(nodes.size)
        ]
        write_csv(out / "consistent_policy.csv", cfg, ["nu_0", "mean_action_state0", "mean_action_state1"], rows)
    per = res.report.per_node
    write_csv(
        out / "consistent_residual_map.csv",
        cfg,
        ["nu_0", "residual_state0", "residual_state1"],
        [(float(nodes[k]), float(per[0, k]), float(per[1, k])) for k in range(nodes.size)],
    )
    print(f"solve-consistent: iterations={res.iterations} residual={res.report.residual:.3e} lipschitz={res.lipschitz:.4f}")
    return 0 if res.converged else 1


def cmd_verify_mfg(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    policy = _load_policy(cfg)
    out = cfg.out_dir()
    if isinstance(policy, TimePolicy):
        report = verify_classic(model, policy, nu0=np.asarray(cfg.nu0))
        write_json(
            out / "verify_report.json",
            {
                "provenance": provenance(cfg),
                "kind": "time",
                "model": model.name,
                "nu0": list(cfg.nu0),
                "residual": report.residual,
                "certified_epsilon": report.certified_epsilon,
                "flow_residual": report.flow_residual,
                "worst_point": list(report.worst_point),
                "tail": report.tail,
                "horizon": report.horizon,
            },
        )
        write_csv(
            out / "verify_residuals.csv",
            cfg,
            ["t", "residual_state0", "residual_state1"],
            [(t, float(report.per_time[t, 0]), float(report.per_time[t, 1])) for t in range(report.horizon + 1)],
        )
        print(f"verify-mfg: residual={report.residual:.3e}")
    else:
        if policy.nu_grid.k != cfg.nu_k:
            # re-tabulate onto the configured grid so residuals are probed off the policy's own nodes
            grid = NuGrid(cfg.nu_k)
            if policy.is_dirac:
                locs = np.stack(
                    [[evaluate_feedback(policy, x, node).point for node in grid.points] for x in range(2)]
                )
                policy = FeedbackPolicy(policy.grid, grid, dirac_locations=locs)
            else:
                rows = np.stack(
                    [[evaluate_feedback(policy, x, node).weights for node in grid.points] for x in range(2)]
                )
                policy = FeedbackPolicy(policy.grid, grid, rows=rows)
        report = verify_consistent(model, policy)
        nodes = policy.nu_grid.points[:, 0]
        write_json(
            out / "verify_report.json",
            {
                "provenance": provenance(cfg),
                "kind": "feedback",
                "model": model.name,
                "nu_grid_k": policy.nu_grid.k,
                "residual": report.residual,
                "lipschitz": lipschitz_estimate(policy) if policy.is_dirac else None,
            },
        )
        write_csv(
            out / "verify_residuals.csv",
            cfg,
            ["nu_0", "residual_state0", "residual_state1"],
            [(float(nodes[k]), float(report.per_node[0, k]), float(report.per_node[1, k])) for k in range(nodes.size)],
        )
        print(f"verify-mfg: residual={report.residual:.3e}")
    return 0


def cmd_nagent_gap(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    policy = _load_policy(cfg)
    if not isinstance(policy, FeedbackPolicy):
        raise SystemExit("error: config field 'policy': nagent-gap needs a feedback policy")
    out = cfg.out_dir()
    rows = []
    for n in cfg.n_list:
        rep = nagent.consistent_gap(model, policy, int(n), eps_tail=cfg.eps_tail, horizon=cfg.horizon or None)
        rows.append((int(n), float(rep.epsilon_n), rep.horizon, float(rep.tail)))
        print(f"nagent-gap: N={n} epsilon_N={rep.epsilon_n:.3e}")
    write_csv(out / "nagent_gap.csv", cfg, ["N", "epsilon_N", "horizon", "tail"], rows)
    write_json(
        out / "nagent_gap.json",
        {"provenance": provenance(cfg), "model": model.name, "curve": [{"N": r[0], "epsilon_N": r[1]} for r in rows]},
    )
    return 0


def cmd_nagent_mc(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    policy = _load_policy(cfg)
    out = cfg.out_dir()
    n = int(cfg.n_list[0])
    T = cfg.horizon or horizon_for_tail(model, cfg.eps_tail)
    init = ("iid", np.asarray(cfg.nu0)) if cfg.init == "iid" else ("fixed", cfg.x, np.asarray(cfg.nu0))
    stats = nagent.mc_simulate(model, policy, n, init, T, cfg.samples, cfg.seed)
    write_json(
        out / "nagent_mc.json",
        {
            "provenance": provenance(cfg),
            "model": model.name,
            "N": n,
            "init": cfg.init,
            "nu0": list(cfg.nu0),
            "x": cfg.x,
            "horizon": T,
            "samples": cfg.samples,
            "value_mean": stats.value_mean,
            "value_ci99": stats.value_ci99,
        },
    )
    write_csv(
        out / "nagent_mc_flow.csv",
        cfg,
        ["t", "mean_mu_0", "mean_mu_1"],
        [(t, float(stats.flow_mean[t, 0]), float(stats.flow_mean[t, 1])) for t in range(T + 1)],
    )
    print(f"nagent-mc: N={n} value={stats.value_mean:.6f} +-{stats.value_ci99:.2e} (99% CI)")
    return 0


def cmd_precommit_gap(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    if cfg.policy:
        policy = _load_policy(cfg)
        if not isinstance(policy, TimePolicy):
            raise SystemExit("error: config field 'policy': precommit-gap needs a time policy")
    else:
        policy = solve_classic(model, np.asarray(cfg.nu0), eps_tail=cfg.eps_tail).policy
    out = cfg.out_dir()
    rows = []
    for n in cfg.n_list:
        rep = nagent.precommit_gap(model, policy, np.asarray(cfg.nu0), int(n), cfg.samples, cfg.seed)
        rows.append((int(n), float(rep.gap), float(rep.ci99), float(rep.upper99), float(rep.best_u), cfg.samples))
        print(f"precommit-gap: N={n} gap={rep.gap:.3e} upper99={rep.upper99:.3e}")
    write_csv(out / "precommit_gap.csv", cfg, ["N", "gap", "ci99", "upper99", "best_u", "samples"], rows)
    return 0


def cmd_rare_event_gap(cfg: ExperimentConfig) -> int:
    out = cfg.out_dir()
    rows = []
    for n in cfg.n_list:
        try:
            gap, prob = nagent.conditional_deviation_gap(int(n), eps_tail=cfg.eps_tail)
        except ValueError as exc:
            raise SystemExit(f"error: config field 'n_list': {exc}")
        rows.append((int(n), float(gap), float(prob)))
        print(f"rare-event-gap: N={n} gap={gap:.6f} rare_event_prob={prob:.6g}")
    write_csv(out / "rare_event_gap.csv", cfg, ["N", "gap", "rare_event_prob"], rows)
    return 0


def cmd_convergence_sweep(cfg: ExperimentConfig) -> int:
    model = _model(cfg)
    if cfg.policy:
        policy = _load_policy(cfg)
        if not isinstance(policy, FeedbackPolicy):
            raise SystemExit("error: config field 'policy': convergence-sweep needs a feedback policy")
    else:
        policy = solve_consistent(model, nu_grid_k=cfg.nu_k).policy
    out = cfg.out_dir()
    nu_samples = [np.array([a, 1.0 - a]) for a in np.linspace(0.03, 0.97, 20)]
    flow_rows, value_rows, cont_rows, eps_rows = [], [], [], []
    for n in cfg.n_list:
        n = int(n)
        disc = nagent.flow_discrepancy(model, policy, n, cfg.x, np.asarray(cfg.nu0), [1, 2, 4])
        for t, v in sorted(disc.items()):
            flow_rows.append((n, t, float(v)))
        value_rows.append((n, float(nagent.value_discrepancy(model, policy, n, nu_samples, cfg.eps_tail))))
        cont_rows.append((n, float(nagent.continuation_discrepancy(model, policy, n, nu_samples, cfg.eps_tail))))
        eps_rows.append((n, float(nagent.consistent_gap(model, policy, n, eps_tail=cfg.eps_tail).epsilon_n)))
        print(f"convergence-sweep: N={n} flow@1={disc[1]:.4f} value={value_rows[-1][1]:.2e} continuation={cont_rows[-1][1]:.2e} epsilon={eps_rows[-1][1]:.2e}")
    write_csv(out / "convergence_flow.csv", cfg, ["N", "t", "mean_l1_flow_error"], flow_rows)
    write_csv(out / "convergence_value.csv", cfg, ["N", "sup_value_error"], value_rows)
    write_csv(out / "convergence_continuation.csv", cfg, ["N", "sup_continuation_error"], cont_rows)
    write_csv(out / "convergence_epsilon.csv", cfg, ["N", "epsilon_N"], eps_rows)
    return 0


_COMMANDS = {
    "solve-classic": cmd_solve_classic,
    "solve-consistent": cmd_solve_consistent,
    "verify-mfg": cmd_verify_mfg,
    "nagent-gap": cmd_nagent_gap,
    "nagent-mc": cmd_nagent_mc,
    "precommit-gap": cmd_precommit_gap,
    "rare-event-gap": cmd_rare_event_gap,
    "convergence-sweep": cmd_convergence_sweep,
}


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ticmfg",
        description="Solvers and N-agent verifiers for time-inconsistent mean-field games (two states).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default="", help="JSON config file; flags override its fields")
        p.add_argument("--model", default=None, help="builtin model name or tabulated-model JSON path (default tracking)")
        p.add_argument("--action-m", dest="action_m", type=int, default=None, help="action grid size (default 101)")
        p.add_argument("--nu-k", dest="nu_k", type=int, default=None, help="simplex grid intervals (default 200)")
        p.add_argument("--eps-tail", dest="eps_tail", type=float, default=None, help="tail truncation budget (default 1e-8)")
        p.add_argument("--tol", type=float, default=None, help="fixed-point tolerance (default per command)")
        p.add_argument("--tie-tol", dest="tie_tol", type=float, default=None, help="argmax tie tolerance (default 1e-9)")
        p.add_argument("--horizon", type=int, default=None, help="horizon override (default from eps-tail)")
        p.add_argument("--nu0", type=_float_list, default=None, help="initial distribution, e.g. 0.5,0.5")
        p.add_argument("--N", dest="n_list", type=_int_list, default=None, help="agent counts, e.g. 4,8,16")
        p.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count (default 1e5)")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed (default 0)")
        p.add_argument("--x", type=int, default=None, help="tagged agent's initial state (default 0)")
        p.add_argument("--init", choices=["fixed", "iid"], default=None, help="N-agent initialization mode")
        p.add_argument("--max-iter", dest="max_iter", type=int, default=None, help="iteration cap (default per command)")
        p.add_argument("--policy", default=None, help="path to a saved policy JSON")
        p.add_argument("--output-dir", dest="output_dir", default=None, help="artifact directory (default $TICMFG_OUTPUT_DIR or .)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args)
    return _COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
