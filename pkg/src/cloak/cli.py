"""``cloakctl``: key generation, private and direct runs, privacy reports, self-checks."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .group import (
    MAX_COND,
    Isomorphism,
    TrivialStabilizerWarning,
    act_on_system,
    act_on_trajectory,
    compose,
    fixed_point_residual,
    identity,
    inverse,
    sample_isomorphism,
    stabilizer_subspace,
)
from .instances import ProblemInstance, transform_instance
from .io import (
    key_from_json,
    key_to_json,
    load_json,
    objective_from_json,
    plant_from_json,
    save_json,
)
from .linalg import is_lifted
from .mpc import condense, solve, stabilizing_feedback
from .objective import ControlObjective
from .privacy import (
    certify_trivial_stabilizer,
    dim_pair_formula,
    dim_prime_formula,
    stabilizer_omega_dim,
    uncertainty_dimension,
)
from .protocol import indistinguishable, run_direct, run_session
from .sysmodel import InvalidPlantError, lift_point, lift_system, structure_report
from .transport import TransportError, parse_address

log = logging.getLogger("cloakctl")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HALTED = 2
EXIT_WARNING = 3


class ConfigError(ValueError):
    def __init__(self, check: str, message: str):
        super().__init__(f"[{check}] {message}")
        self.check = check


@dataclass
class RunConfig:
    system: Path | None = None
    objective: Path | None = None
    key: Path | None = None
    scenario: int = 1
    seed: int = 0
    horizon: int | None = None
    steps: int = 30
    transport: str = "in-process"
    connect: str | None = None
    out: Path = Path(".")

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigError("config", f"scenario must be 1, 2 or 3, got {self.scenario}")
        for name in ("system", "objective", "key"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError("config", f"{name} file {path} does not exist")
        if self.steps < 1:
            raise ConfigError("config", "steps must be at least 1")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        fields = {k: getattr(args, k) for k in cls.__dataclass_fields__ if hasattr(args, k)}
        for k in ("system", "objective", "key", "out"):
            if fields.get(k) is not None:
                fields[k] = Path(fields[k])
        return cls(**fields)

    # -- loading --------------------------------------------------------------

    def load_plant(self):
        if self.system is None:
            raise ConfigError("config", "--system is required")
        try:
            return plant_from_json(load_json(self.system))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("dims", f"cannot read system: {exc}") from exc

    def load_instance(self) -> ProblemInstance:
        plant = self.load_plant()
        try:
            sys_ = lift_system(plant)
        except InvalidPlantError as exc:
            raise ConfigError(exc.check, str(exc)) from exc
        if self.objective is None:
            raise ConfigError("config", "--objective is required")
        try:
            obj, x0 = objective_from_json(load_json(self.objective), plant.n)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("dims", f"cannot read objective: {exc}") from exc
        if (obj.n, obj.m) != (plant.n, plant.m):
            raise ConfigError("dims", f"objective is for (n, m) = {(obj.n, obj.m)}, "
                                      f"system has {(plant.n, plant.m)}")
        if self.horizon is not None and self.horizon != obj.N:
            obj = with_horizon(obj, self.horizon)
        if x0 is None:
            x0 = lift_point(np.zeros(plant.n))
        try:
            return ProblemInstance(sys_, obj, x0)
        except ValueError as exc:
            raise ConfigError("dims", str(exc)) from exc

    def load_key(self, inst: ProblemInstance) -> Isomorphism:
        if self.key is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TrivialStabilizerWarning)
                return sample_isomorphism(self.scenario, inst.system, self.seed)
        try:
            psi = key_from_json(load_json(self.key))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("key-structure", f"cannot read key: {exc}") from exc
        if psi.dims != inst.dims:
            raise ConfigError("dims", f"key is for {psi.dims}, system is {inst.dims}")
        return psi


def with_horizon(obj: ControlObjective, N: int) -> ControlObjective:
    """Same objective over a different horizon; needs constant references."""
    if not (np.all(obj.x_ref == obj.x_ref[0]) and np.all(obj.u_ref == obj.u_ref[0])):
        raise ConfigError("config", "--horizon needs constant references")
    return ControlObjective(obj.M, np.tile(obj.x_ref[0], (N + 1, 1)),
                            np.tile(obj.u_ref[0], (N + 1, 1)), obj.D, N)


def write_trajectory_csv(path, result) -> None:
    n = result.xs.shape[1] - 1
    m = result.us.shape[1]
    p = result.ys.shape[1] - 1 if result.ys.size else 0
    header = (["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
              + [f"y{i + 1}" for i in range(p)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(result.xs)):
            row = [k] + [repr(float(v)) for v in result.xs[k, :n]]
            row += [repr(float(v)) for v in result.us[k]] if k < len(result.us) else [""] * m
            row += [repr(float(v)) for v in result.ys[k, :p]] if k < len(result.ys) else [""] * p
            w.writerow(row)


# -- commands -------------------------------------------------------------------

def cmd_keygen(cfg: RunConfig) -> int:
    plant = cfg.load_plant()
    try:
        sys_ = lift_system(plant)
    except InvalidPlantError as exc:
        raise ConfigError(exc.check, str(exc)) from exc
    code = EXIT_OK
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TrivialStabilizerWarning)
        psi = sample_isomorphism(cfg.scenario, sys_, cfg.seed)
    extra = {"conditions": psi.conditions()}
    if cfg.scenario == 3:
        extra["fixed_point_residual"] = fixed_point_residual(psi, sys_)
    if any(issubclass(w.category, TrivialStabilizerWarning) for w in caught):
        extra["warning"] = "trivial symmetry group: identity key"
        print("warning: symmetry group is trivial, wrote the identity key", file=sys.stderr)
        code = EXIT_WARNING
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "key.json"
    save_json(path, key_to_json(psi, cfg.scenario, cfg.seed, **extra))
    print(path)
    return code


def _connect_or_spawn(cfg: RunConfig):
    """Address of the cloud for TCP runs, plus a process to stop afterwards."""
    if cfg.connect:
        return parse_address(cfg.connect), None
    proc = subprocess.Popen(
        [sys.executable, "-m", "cloak.cli", "serve", "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE, text=True)
    line = proc.stdout.readline().strip()
    if not line.startswith("listening on "):
        proc.kill()
        raise TransportError(f"cloud service failed to start: {line!r}")
    return parse_address(line.removeprefix("listening on ")), proc


def cmd_simulate(cfg: RunConfig) -> int:
    inst = cfg.load_instance()
    psi = cfg.load_key(inst)
    proc = None
    t0 = time.perf_counter()
    try:
        if cfg.transport == "tcp":
            address, proc = _connect_or_spawn(cfg)
            result = run_session(inst, psi, cfg.steps, "tcp", address)
        else:
            result = run_session(inst, psi, cfg.steps)
    finally:
        if proc is not None:
            proc.terminate()
            proc.wait(timeout=10)
    elapsed = time.perf_counter() - t0
    cfg.out.mkdir(parents=True, exist_ok=True)
    result.transcript.dump(cfg.out / "transcript.jsonl")
    report = result.report()
    report["wall_time_s"] = elapsed
    report["transport"] = cfg.transport
    save_json(cfg.out / "report.json", report)
    write_trajectory_csv(cfg.out / "trajectory.csv", result)
    print(json.dumps({"status": result.status, "cost": result.cost, "steps": len(result.us),
                      "wall_time_s": round(elapsed, 3), "out": str(cfg.out)}))
    if result.status != "completed":
        print(f"error: session {result.status}", file=sys.stderr)
        return EXIT_HALTED
    return EXIT_OK


def cmd_direct(cfg: RunConfig) -> int:
    inst = cfg.load_instance()
    result = run_direct(inst, cfg.steps)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_json(cfg.out / "report.json", result.report())
    write_trajectory_csv(cfg.out / "trajectory.csv", result)
    print(json.dumps({"status": result.status, "cost": result.cost, "steps": len(result.us)}))
    return EXIT_OK if result.status == "completed" else EXIT_HALTED


def cmd_privacy_report(cfg: RunConfig, side_k: int, as_json: bool) -> int:
    plant = cfg.load_plant()
    D, obj = None, None
    if cfg.objective is not None:
        obj, _ = objective_from_json(load_json(cfg.objective), plant.n)
        D = obj.D
    report = uncertainty_dimension(cfg.scenario, plant, D, side_k)
    if as_json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.table())
    if cfg.out != Path("."):
        cfg.out.mkdir(parents=True, exist_ok=True)
        save_json(cfg.out / "privacy.json", report.to_dict())
    return EXIT_OK


def _check(checks: list, name: str, fn) -> bool:
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    checks.append({"check": name, "ok": bool(ok), "detail": detail})
    return bool(ok)


def verification_checks(inst: ProblemInstance, psi: Isomorphism, steps: int = 10) -> list[dict]:
    checks: list[dict] = []
    n, m, p = inst.dims
    rng = np.random.default_rng(0)

    def invertible():
        c = psi.conditions()
        return all(np.isfinite(v) and v < MAX_COND for v in c.values()), c

    def structure():
        return is_lifted(psi.P) and is_lifted(psi.S), "P and S keep the lifted last row"

    if not _check(checks, "key-invertibility", invertible) or not _check(
            checks, "key-structure", structure):
        return checks

    def group_axioms():
        err = float(np.max(np.abs(compose(inverse(psi), psi).L - identity(n, m, p).L)))
        return err <= 1e-8, {"inverse_error": err}

    def trajectories():
        U = rng.uniform(-1, 1, (20, m))
        xs, ys = inst.system.simulate(inst.x0, U)
        xt, ut, yt = act_on_trajectory(psi, xs[:-1], U, ys[:-1])
        enc = act_on_system(psi, inst.system)
        res = max(float(np.max(np.abs(xt[1:] - (xt[:-1] @ enc.A.T + ut[:-1] @ enc.B.T)))),
                  float(np.max(np.abs(yt - xt @ enc.C.T))))
        scale = max(1.0, float(np.max(np.abs(xt))))
        return res <= 1e-9 * scale, {"residual": res}

    def recovery():
        enc = transform_instance(psi, inst)
        out = []
        for ins in (inst, enc):
            qp = condense(ins.system, ins.objective, ins.x0,
                          stabilizing_feedback(ins.system, ins.objective.M))
            res = solve(qp)
            out.append((res.ok, qp.inputs(res.U).reshape(-1, m), qp.objective(res.U)))
        (ok0, U0, J0), (ok1, U1, J1) = out
        xs, _ = inst.system.simulate(inst.x0, U0[:-1])
        dec = (U1 - xs @ psi.F.T) @ np.linalg.inv(psi.G).T
        err = float(np.max(np.abs(dec - U0) / np.maximum(np.abs(U0), 1.0)))
        cost_err = abs(J1 - J0) / max(abs(J0), 1e-12)
        return ok0 and ok1 and err <= 1e-5 and cost_err <= 1e-6, {
            "max_rel_error": err, "objective_rel_error": cost_err}

    def replay():
        T = min(steps, 10)
        a = run_session(inst, psi, T)
        b = run_session(transform_instance(psi, inst), identity(n, m, p), T)
        return indistinguishable(a.transcript, b.transcript), {"steps": T, "status": a.status}

    def pair_formula():
        plant = inst.system.bare()
        f = dim_pair_formula(plant)
        o = stabilizer_subspace(inst.system, with_output=False).dim
        return f == o, {"formula": f, "oracle": o}

    _check(checks, "group-axioms", group_axioms)
    _check(checks, "trajectory-equivalence", trajectories)
    _check(checks, "input-recovery", recovery)
    _check(checks, "replay", replay)
    _check(checks, "pair-formula", pair_formula)
    plant = inst.system.bare()
    if structure_report(plant).is_brunovsky_form:
        def prime():
            f = dim_prime_formula(plant)
            o = stabilizer_subspace(inst.system, with_output=True).dim
            return f == o, {"formula": f, "oracle": o}
        _check(checks, "prime-formula", prime)
    if certify_trivial_stabilizer(inst.objective.D, n):
        def trivial():
            d = stabilizer_omega_dim(inst.system, inst.objective.D)
            return d == 0, {"dim": d}
        _check(checks, "trivial-stabilizer", trivial)
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    try:
        inst = cfg.load_instance()
        psi = cfg.load_key(inst)
    except ConfigError as exc:
        print(json.dumps({"ok": False, "checks": [{"check": exc.check, "ok": False,
                                                   "detail": str(exc)}]}, indent=2))
        return EXIT_ERROR
    checks = verification_checks(inst, psi, cfg.steps)
    ok = all(c["ok"] for c in checks)
    print(json.dumps({"ok": ok, "checks": checks}, indent=2, default=str))
    for c in checks:
        if not c["ok"]:
            print(f"failed: {c['check']}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_ERROR


def cmd_serve(listen: str) -> int:
    from .transport import CloudServer

    server = CloudServer(parse_address(listen))
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cloakctl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, objective=True, key=False, run=False):
        sp.add_argument("--system", required=True, help="system JSON file")
        if objective:
            sp.add_argument("--objective", help="objective JSON file")
        if key:
            sp.add_argument("--key", help="key JSON file (default: sample one from --scenario/--seed)")
        sp.add_argument("--scenario", type=int, default=1, choices=(1, 2, 3))
        sp.add_argument("--seed", type=int, default=0)
        if run:
            sp.add_argument("--steps", type=int, default=30)
            sp.add_argument("--horizon", type=int, default=None)
        sp.add_argument("--out", default=".", help="output directory")

    common(sub.add_parser("keygen", help="sample a key"), objective=False)
    sp = sub.add_parser("simulate", help="run the private protocol")
    common(sp, key=True, run=True)
    sp.add_argument("--transport", choices=("in-process", "tcp"), default="in-process")
    sp.add_argument("--connect", metavar="HOST:PORT", help="use a running cloud service")
    common(sub.add_parser("direct", help="run the non-private baseline"), run=True)
    sp = sub.add_parser("privacy-report", help="uncertainty-set dimensions")
    common(sp)
    sp.add_argument("--side-k", type=int, default=0, help="rank of the cloud's side knowledge")
    sp.add_argument("--json", action="store_true")
    common(sub.add_parser("verify", help="check invariants on an instance"), key=True, run=True)
    sp = sub.add_parser("serve", help="run the cloud service")
    sp.add_argument("--listen", default="127.0.0.1:0", metavar="HOST:PORT")
    return ap


def main(argv=None) -> int:
    level = os.environ.get("CLOAKCTL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return cmd_serve(args.listen)
        cfg = RunConfig.from_args(args)
        if args.command == "keygen":
            return cmd_keygen(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "direct":
            return cmd_direct(cfg)
        if args.command == "privacy-report":
            return cmd_privacy_report(cfg, args.side_k, args.json)
        if args.command == "verify":
            return cmd_verify(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (TransportError, InvalidPlantError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
