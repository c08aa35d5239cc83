"""``losssense`` command line.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from . import bures
from .channel import LossParams, apply_loss, loss_derivative
from .config import ConfigError, ScenarioConfig, load_config
from .errors import NumericalError, ValidationError
from .estimation import SimScenario, run_sim, write_estimates_csv
from .fock import build_probe, dump_state, energy, is_number_diagonal, schmidt_decompose
from .measurements import on_off_povm, outcome_distribution, photon_counting_povm, sample, schmidt_povm, write_outcome_csv
from .metrology import classical_fi, fidelity, qfi_from_fidelity, qfim

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _probe(cfg):
    if cfg.probe is None:
        raise ConfigError("config needs a probe section")
    tol = cfg.tolerances
    return build_probe(cfg.probe, cfg.ancilla_policy, tol.eps_trunc, tol.force)


def _params(cfg, etas=None):
    etas = cfg.etas if etas is None else etas
    if etas is None:
        raise ConfigError("config needs loss.etas")
    return LossParams(tuple(etas), cfg.parametrization)


def _povm(cfg, probe):
    if cfg.measurement == "on_off":
        return on_off_povm(probe.layout)
    if cfg.measurement == "photon_counting":
        return photon_counting_povm(probe.layout)
    return schmidt_povm(probe)


def cmd_qfim(cfg, args):
    probe = _probe(cfg)
    params = _params(cfg)
    report = qfim(probe, params, rank_tol=cfg.tolerances.rank_tol)
    out = report.to_dict()
    if len(params.etas) == 1 and 0.0 < params.etas[0] < 1.0:
        tol = cfg.tolerances
        rho = apply_loss(probe, params)
        drho = loss_derivative(probe, params, 1, cfg.parametrization)
        out["cfi"] = {"measurement": cfg.measurement,
                      "value": classical_fi(_povm(cfg, probe), rho, drho, tol.prob_tol)}
        phi = params.phis[0]
        if tol.fd_step <= phi <= math.pi / 2 - tol.fd_step:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                check = qfi_from_fidelity(probe, params, step=tol.fd_step)
            out["qfi_fidelity_phi"] = {"value": check, "stable": not caught}
    return _dumps(out)


def cmd_fidelity(cfg, args):
    probe = _probe(cfg)
    params = _params(cfg)
    if cfg.eta_prime is None:
        raise ConfigError("fidelity needs eta_prime")
    other = _params(cfg, cfg.eta_prime)
    if len(other.etas) != len(params.etas):
        raise ConfigError("eta_prime needs one entry per element")
    out = {
        "etas": list(params.etas),
        "eta_prime": list(other.etas),
        "uhlmann": fidelity(probe, params, other, "uhlmann").value,
        "purified_sum": fidelity(probe, params, other, "purified_sum",
                                 component_tol=cfg.tolerances.component_tol).value,
        "nds": bool(is_number_diagonal(probe)),
    }
    if out["nds"]:
        out["nds_closed_form"] = fidelity(probe, params, other, "nds_closed_form").value
    return _dumps(out)


def _ecb_query(cfg, args):
    sec = cfg.ecb
    vals = {
        "eta": args.eta if args.eta is not None else (sec.eta if sec else None),
        "eta_prime": args.eta_prime if args.eta_prime is not None else (sec.eta_prime if sec else None),
        "energy": args.energy if args.energy is not None else (sec.energy if sec else None),
    }
    missing = [k for k, v in vals.items() if v is None]
    if missing:
        raise ConfigError(f"ecb needs {', '.join(missing)}")
    modes = args.modes if args.modes is not None else (sec.modes if sec else 1)
    n_max = args.n_max if args.n_max is not None else (sec.n_max if sec else None)
    return bures.EcbQuery(vals["eta"], vals["eta_prime"], vals["energy"], modes, n_max)


def cmd_ecb(cfg, args):
    q = _ecb_query(cfg, args)
    closed = bures.min_fidelity_closed(q.energy, q.mu)
    oracle = bures.min_fidelity_bruteforce(q)
    return _dumps({
        "query": q.to_dict(),
        "mu": q.mu,
        "closed_form": closed,
        "oracle": oracle.value,
        "argmin_support": list(oracle.support),
        "argmin_weights": list(oracle.weights),
        "ecb_distance": bures.ecb_distance(q),
        "agree": abs(closed - oracle.value) <= 1e-9,
    })


def cmd_simulate(cfg, args):
    if cfg.probe is None:
        raise ConfigError("config needs a probe section")
    sim = cfg.simulation
    scenario = SimScenario(cfg.probe, _params(cfg), cfg.measurement, sim.shots, sim.trials, cfg.seed,
                           sim.estimator, sim.grid_points, tuple(sim.grid_bounds), ancilla_policy=cfg.ancilla_policy)
    report = run_sim(scenario, threads=args.threads)
    if cfg.output_format == "csv":
        buf = io.StringIO()
        write_estimates_csv(buf, report)
        return buf.getvalue()
    return report.to_json() + "\n"


def cmd_outcomes(cfg, args):
    probe = _probe(cfg)
    params = _params(cfg)
    povm = _povm(cfg, probe)
    probs = outcome_distribution(apply_loss(probe, params), povm, cfg.tolerances.eps_trunc)
    counts = sample(probs, cfg.simulation.shots, cfg.seed)
    if cfg.output_format == "csv":
        buf = io.StringIO()
        write_outcome_csv(buf, povm.labels, probs, counts)
        return buf.getvalue()
    labels = ["/".join(l) if isinstance(l, tuple) else str(l) for l in povm.labels]
    return _dumps({"labels": labels, "probabilities": probs.tolist(), "counts": counts.tolist(),
                   "shots": cfg.simulation.shots})


def cmd_probe_dump(cfg, args):
    probe = _probe(cfg)
    if args.state_out:
        dump_state(probe, args.state_out, args.state_format)
    schmidt = schmidt_decompose(probe)
    return _dumps({
        "layout": probe.layout.to_dict(),
        "dim": probe.layout.dim,
        "energies": [energy(probe, k) for k in probe.layout.elements],
        "truncation_deficit": probe.deficit,
        "number_diagonal": bool(is_number_diagonal(probe)),
        "schmidt_weights": schmidt.weights.tolist(),
        "state_file": args.state_out,
    })


COMMANDS = {
    "qfim": cmd_qfim,
    "fidelity": cmd_fidelity,
    "ecb": cmd_ecb,
    "simulate": cmd_simulate,
    "outcomes": cmd_outcomes,
    "probe-dump": cmd_probe_dump,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="losssense", description="Quantum-limited loss sensing toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (YAML or JSON)")
    common.add_argument("--seed", type=int, help="override the config seed (u64)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), help="override output.format")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "ecb":
            p.add_argument("--eta", type=float)
            p.add_argument("--eta-prime", type=float)
            p.add_argument("--energy", type=float)
            p.add_argument("--modes", type=int)
            p.add_argument("--n-max", type=int)
        if name == "probe-dump":
            p.add_argument("--state-out", help="write the probe amplitudes to this file")
            p.add_argument("--state-format", choices=("binary", "json"), default="binary")
    return parser


def _resolve(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = cfg.to_dict()
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.format is not None:
        changes["output"]["format"] = args.format
    if args.out is not None:
        changes["output"]["path"] = args.out
    return ScenarioConfig.from_dict(changes)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        text = COMMANDS[args.command](cfg, args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.output_path:
        with open(cfg.output_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
