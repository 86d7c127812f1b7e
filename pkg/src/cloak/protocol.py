"""Plant/cloud protocol: handshake once, then measurement/control rounds.

The plant encodes its problem with a secret isomorphism, sends encoded
measurements and decodes the inputs it gets back. The cloud only ever sees
the encoded problem; everything it sees is recorded in a :class:`Transcript`.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .group import Isomorphism, act_on_system, identity
from .instances import ProblemInstance
from .io import canonical_dumps
from .mpc import (
    SOLVED,
    SolverConfig,
    condense,
    deadbeat_estimate,
    schur_metric,
    solve,
    stabilizing_feedback,
)
from .objective import ControlObjective, transform_objective
from .sysmodel import LiftedSystem

log = logging.getLogger(__name__)

PLANT_TO_CLOUD = "plant->cloud"
CLOUD_TO_PLANT = "cloud->plant"
COMPARE_DIGITS = 12


class ProtocolError(RuntimeError):
    pass


# -- messages -------------------------------------------------------------------

@dataclass(frozen=True)
class HandshakeMsg:
    system: LiftedSystem
    objective: ControlObjective

    def to_dict(self) -> dict:
        s, o = self.system, self.objective
        return {"type": "handshake", "A": s.A.tolist(), "B": s.B.tolist(), "C": s.C.tolist(),
                "M": o.M.tolist(), "x_ref": o.x_ref.tolist(), "u_ref": o.u_ref.tolist(),
                "D": o.D.tolist(), "N": o.N}

    @classmethod
    def from_dict(cls, d: dict) -> "HandshakeMsg":
        sys = LiftedSystem(d["A"], d["B"], d["C"])
        k = sys.n + 1 + sys.m
        D = np.asarray(d["D"], dtype=float).reshape(-1, k)
        return cls(sys, ControlObjective(d["M"], d["x_ref"], d["u_ref"], D, d["N"]))


@dataclass(frozen=True)
class MeasurementMsg:
    k: int
    y: np.ndarray

    def to_dict(self) -> dict:
        return {"type": "measurement", "k": int(self.k), "y": np.asarray(self.y).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementMsg":
        return cls(int(d["k"]), np.asarray(d["y"], dtype=float))


@dataclass(frozen=True)
class ControlMsg:
    k: int
    u: np.ndarray
    status: str = SOLVED

    def to_dict(self) -> dict:
        return {"type": "control", "k": int(self.k), "u": np.asarray(self.u).tolist(),
                "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlMsg":
        return cls(int(d["k"]), np.asarray(d["u"], dtype=float), d.get("status", SOLVED))


def wire_roundtrip(msg: dict) -> dict:
    """What the other side parses after canonical encoding."""
    return json.loads(canonical_dumps(msg))


# -- plant side -----------------------------------------------------------------

class PlantCodec:
    """Per-step encoding work with the key's constant products precomputed.

    After construction every call is a handful of matrix-vector products.
    """

    def __init__(self, psi: Isomorphism):
        self.S = np.array(psi.S)
        self.G = np.array(psi.G)
        self.F = np.array(psi.F)
        self.Ginv = np.linalg.inv(psi.G)
        self.GinvF = self.Ginv @ psi.F

    def encode_output(self, y):
        return self.S @ y

    def decode_input(self, x, u_enc):
        return self.Ginv @ u_enc - self.GinvF @ x

    def encode_input(self, x, u):
        return self.F @ x + self.G @ u


def plant_handshake(inst: ProblemInstance, psi: Isomorphism) -> HandshakeMsg:
    return HandshakeMsg(act_on_system(psi, inst.system), transform_objective(psi, inst.objective))


def plant_step(codec: PlantCodec | Isomorphism, k: int, y) -> MeasurementMsg:
    if isinstance(codec, Isomorphism):
        codec = PlantCodec(codec)
    return MeasurementMsg(k, codec.encode_output(np.asarray(y, dtype=float)))


def plant_decode(codec: PlantCodec | Isomorphism, x, u_enc) -> np.ndarray:
    """``u = G^-1 (u_enc - F x)`` using the plant's own state ``x``."""
    if isinstance(codec, Isomorphism):
        codec = PlantCodec(codec)
    return codec.decode_input(np.asarray(x, dtype=float), np.asarray(u_enc, dtype=float))


class Plant:
    """The plant actor: owns the true state and the key."""

    def __init__(self, inst: ProblemInstance, psi: Isomorphism):
        self.inst = inst
        self.psi = psi
        self.codec = PlantCodec(psi)
        self.A = np.array(inst.system.A)
        self.B = np.array(inst.system.B)
        self.C = np.array(inst.system.C)
        self.x = np.array(inst.x0)
        self.xs = [self.x.copy()]
        self.us: list[np.ndarray] = []
        self.ys: list[np.ndarray] = []

    def handshake(self) -> HandshakeMsg:
        return plant_handshake(self.inst, self.psi)

    def measure(self, k: int) -> MeasurementMsg:
        y = self.C @ self.x
        self.ys.append(y)
        return plant_step(self.codec, k, y)

    def actuate(self, msg: ControlMsg) -> np.ndarray:
        u = plant_decode(self.codec, self.x, msg.u)
        self.x = self.A @ self.x + self.B @ u
        self.us.append(u)
        self.xs.append(self.x.copy())
        return u


# -- cloud side -----------------------------------------------------------------

class CloudSession:
    """State the cloud keeps for one plant: the encoded problem and a window
    of recent encoded outputs and inputs.
    """

    def __init__(self, handshake: HandshakeMsg, cfg: SolverConfig | None = None):
        self.system = handshake.system
        self.objective = handshake.objective
        self.cfg = cfg or SolverConfig()
        n1 = self.system.n + 1
        self.feedback = stabilizing_feedback(self.system, self.objective.M)
        self.metric = schur_metric(self.objective.M, n1)
        self.prior = np.array(self.objective.x_ref[0])
        self.ys: deque = deque(maxlen=n1)
        self.us: deque = deque(maxlen=n1 - 1)
        self.last_k = -1
        self.diagnostics: list[dict] = []

    def step(self, msg: MeasurementMsg) -> ControlMsg:
        if msg.k != self.last_k + 1:
            raise ProtocolError(f"expected measurement {self.last_k + 1}, got {msg.k}")
        self.last_k = msg.k
        self.ys.append(np.asarray(msg.y, dtype=float))
        w = len(self.ys)
        us = list(self.us)[len(self.us) - (w - 1):] if w > 1 else []
        est = deadbeat_estimate(self.system, list(self.ys), us, self.prior, self.metric)
        qp = condense(self.system, self.objective, est.x, self.feedback)
        res = solve(qp, self.cfg)
        u = qp.inputs(res.U)[: self.system.m]
        self.us.append(u)
        diag = {"k": msg.k, "flagged": est.flagged}
        diag.update(res.diagnostics())
        self.diagnostics.append(diag)
        return ControlMsg(msg.k, u, res.status)


def cloud_session_step(state: CloudSession, msg: MeasurementMsg) -> ControlMsg:
    return state.step(msg)


class CloudEndpoint:
    """Dispatches wire dicts for one connection; shared by every transport."""

    def __init__(self, cfg: SolverConfig | None = None):
        self.cfg = cfg
        self.session: CloudSession | None = None

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        if kind == "handshake":
            if self.session is not None:
                raise ProtocolError("duplicate handshake")
            self.session = CloudSession(HandshakeMsg.from_dict(msg), self.cfg)
            return {"type": "ack"}
        if self.session is None:
            raise ProtocolError("measurement before handshake")
        if kind == "measurement":
            return self.session.step(MeasurementMsg.from_dict(msg)).to_dict()
        if kind == "close":
            return {"type": "closed", "diagnostics": self.session.diagnostics}
        raise ProtocolError(f"unknown message type {kind!r}")


# -- transcript -------------------------------------------------------------------

@dataclass
class Transcript:
    """Everything the cloud sees, in order, as parsed from the wire."""

    entries: list[tuple[str, dict]] = field(default_factory=list)

    def append(self, direction: str, msg: dict) -> None:
        self.entries.append((direction, msg))

    @property
    def meta(self) -> dict:
        if not self.entries:
            return {}
        hs = self.entries[0][1]
        n1 = len(hs["A"])
        return {"n": n1 - 1, "m": len(hs["B"][0]), "p": len(hs["C"]) - 1, "N": hs["N"],
                "T": sum(1 for d, m in self.entries if m["type"] == "measurement")}

    def lines(self, digits: int = 17) -> list[str]:
        return [canonical_dumps({"dir": d, "msg": m}, digits) for d, m in self.entries]

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "Transcript":
        t = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    t.append(rec["dir"], rec["msg"])
        return t

    def validate(self) -> None:
        from .schema import validate_transcript
        validate_transcript(self)


def _field_scales(*transcripts: Transcript) -> dict:
    """Largest magnitude of each numeric field, per message type, across the transcripts."""
    scales: dict = {}
    for t in transcripts:
        for _, msg in t.entries:
            for key, val in msg.items():
                if isinstance(val, list):
                    arr = np.asarray(val, dtype=float)
                    if arr.size:
                        k = (msg["type"], key)
                        scales[k] = max(scales.get(k, 0.0), float(np.max(np.abs(arr))))
    return scales


def indistinguishable(t1: Transcript, t2: Transcript, digits: int = COMPARE_DIGITS) -> bool:
    """True when the two transcripts agree to ``digits`` significant digits.

    Non-numeric fields must match exactly. Numbers are compared against the
    largest magnitude that field reaches in the session (all measured ``y``
    together, all ``u`` together, each handshake matrix on its own), so a
    signal passing through zero is not held to an impossible relative
    accuracy at that instant.
    """
    if len(t1.entries) != len(t2.entries) or t1.meta != t2.meta:
        return False
    if t1.lines(digits) == t2.lines(digits):
        return True
    scales = _field_scales(t1, t2)
    half_ulp = 0.5 * 10.0 ** (1 - digits)
    for (d1, m1), (d2, m2) in zip(t1.entries, t2.entries):
        if d1 != d2 or set(m1) != set(m2):
            return False
        for key in m1:
            v1, v2 = m1[key], m2[key]
            if not isinstance(v1, list):
                if v1 != v2:
                    return False
                continue
            a, b = np.asarray(v1, dtype=float), np.asarray(v2, dtype=float)
            if a.shape != b.shape:
                return False
            tol = half_ulp * scales.get((m1["type"], key), 0.0)
            if a.size and np.max(np.abs(a - b)) > tol:
                return False
    return True


# -- sessions -------------------------------------------------------------------

@dataclass
class SessionResult:
    xs: np.ndarray
    us: np.ndarray
    ys: np.ndarray
    cost: float
    diagnostics: list
    transcript: Transcript
    status: str = "completed"

    @property
    def flagged_steps(self) -> list[int]:
        return [d["k"] for d in self.diagnostics if d.get("flagged")]

    def report(self) -> dict:
        return {"status": self.status, "cost": self.cost, "steps": len(self.us),
                "states": self.xs.tolist(), "inputs": self.us.tolist(),
                "outputs": self.ys.tolist(), "flagged_steps": self.flagged_steps,
                "diagnostics": self.diagnostics}


def closed_loop_cost(obj: ControlObjective, xs, us) -> float:
    """Stage costs summed over the applied inputs, against the current-time references."""
    us = np.atleast_2d(np.asarray(us, dtype=float)).reshape(-1, obj.m)
    xs = np.asarray(xs, dtype=float)[: len(us)]
    d = np.hstack([xs - obj.x_ref[0], us - obj.u_ref[0]])
    return float(np.einsum("ij,jk,ik->", d, obj.M, d))


class InProcessChannel:
    """Calls the cloud directly but still passes every message through the wire encoding."""

    def __init__(self, cfg: SolverConfig | None = None):
        self.endpoint = CloudEndpoint(cfg)

    def request(self, msg: dict) -> dict:
        reply = self.endpoint.handle(wire_roundtrip(msg))
        return wire_roundtrip(reply)

    def close(self) -> None:
        pass


def run_session(inst: ProblemInstance, psi: Isomorphism, T: int,
                transport: str = "in_process", address=None,
                cfg: SolverConfig | None = None) -> SessionResult:
    """Handshake, then ``T`` measurement/control rounds.

    ``transport`` is ``"in_process"`` or ``"tcp"``; for TCP without an
    ``address`` a local cloud server is started for the session.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    server = None
    if transport in ("in_process", "in-process"):
        channel = InProcessChannel(cfg)
    elif transport == "tcp":
        from .transport import TcpChannel, start_server
        if address is None:
            server, address = start_server(cfg=cfg)
        channel = TcpChannel(address)
    else:
        raise ValueError(f"unknown transport {transport!r}")

    plant = Plant(inst, psi)
    transcript = Transcript()
    status = "completed"
    try:
        hs = wire_roundtrip(plant.handshake().to_dict())
        transcript.append(PLANT_TO_CLOUD, hs)
        channel.request(hs)
        for k in range(T):
            meas = wire_roundtrip(plant.measure(k).to_dict())
            transcript.append(PLANT_TO_CLOUD, meas)
            reply = channel.request(meas)
            transcript.append(CLOUD_TO_PLANT, reply)
            ctrl = ControlMsg.from_dict(reply)
            if ctrl.status != SOLVED:
                status = f"halted: {ctrl.status} at step {k}"
                log.warning("session %s", status)
                break
            plant.actuate(ctrl)
        diagnostics = channel.request({"type": "close"})["diagnostics"]
    finally:
        channel.close()
        if server is not None:
            server.shutdown()
            server.server_close()

    us = np.array(plant.us).reshape(-1, inst.system.m)
    xs = np.array(plant.xs)
    ys = np.array(plant.ys)
    return SessionResult(xs, us, ys, closed_loop_cost(inst.objective, xs, us),
                         diagnostics, transcript, status)


def run_direct(inst: ProblemInstance, T: int, cfg: SolverConfig | None = None) -> SessionResult:
    """Non-private baseline: the plant runs the same MPC on its own data."""
    n, m, p = inst.dims
    return run_session(inst, identity(n, m, p), T, "in_process", cfg=cfg)
