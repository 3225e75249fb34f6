"""Deterministic fleet simulation and adversarial channel.

A scenario drives provisioned client identities against an in-process
server (no sockets) on a manually advanced clock, so freshness and
throttling outcomes are exact and a (scenario, seed) pair always yields a
byte-identical report. An adversary interposes on whole encoded messages;
request-field tampering is white-box (the harness rebuilds the plaintext
request and re-seals it under the server key, the strongest on-link
attacker for an encrypted request).

Reports are line-oriented text followed by a machine-readable JSON
summary block. Key material never appears in a report, which is what
keeps reports reproducible across runs.
"""

from __future__ import annotations

import argparse
import enum
import json
import logging
import random
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from . import client as client_mod
from . import crypto, wire
from .config import DEFAULT_PLATFORM_MEASUREMENT, ServerConfig
from .errors import (
    BadServerSignature,
    ConfigError,
    MalformedMessage,
    OpenFailure,
    Stale,
    UnwrapFailure,
    WrongQuantity,
)
from .pool import EntropyPool
from .server import EntropyService
from .sources import SourceSpec, register_sources
from .stats import MIN_INPUT_BYTES, stats_suite
from .trusted import TrustedApplication

__all__ = [
    "AdversaryAction",
    "AdversaryKind",
    "ScenarioReport",
    "ScenarioSpec",
    "SimClock",
    "depletion_scenario",
    "run_adversary",
    "run_fleet",
    "stats_suite",
]

SIM_EPOCH_MS = 1_750_000_000_000


class SimClock:
    """Manually advanced millisecond clock."""

    def __init__(self, start_ms: int = SIM_EPOCH_MS):
        self._now = start_ms

    def now(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        self._now += ms

    def set(self, ms: int) -> None:
        if ms < self._now:
            raise ValueError("simulated time cannot move backwards")
        self._now = ms


class AdversaryKind(str, enum.Enum):
    DROP = "drop"
    DELAY = "delay"
    REPLAY_RESPONSE = "replay-response"
    TAMPER_PK = "tamper-pk"
    TAMPER_DELTA_S = "tamper-delta-s"
    TAMPER_SIGMA1 = "tamper-sigma1"
    TAMPER_HINT = "tamper-hint"
    TAMPER_REQUEST_CIPHERTEXT = "tamper-request-ciphertext"
    TAMPER_CIPHERTEXT = "tamper-ciphertext"        # response envelope
    TAMPER_WRAPPED_KEY = "tamper-wrapped-key"
    TAMPER_NONCE = "tamper-nonce"
    TAMPER_SIG2 = "tamper-sig2"


@dataclass(frozen=True)
class AdversaryAction:
    """One channel manipulation aimed at a message index."""

    kind: AdversaryKind
    target: int
    parameter: int | None = None   # delay ms


@dataclass
class ScenarioSpec:
    kind: str = "fleet"
    n_clients: int = 1
    requests_per_client: int = 1
    delta_s: int = 32
    max_delta_s: int = wire.DEFAULT_MAX_DELTA_S
    throttle_capacity: Fraction = Fraction(5)
    throttle_refill_rate: Fraction = Fraction(1)
    step_ms: int = 0
    n_sources: int = 2
    source_density: Fraction = Fraction(1)
    source_max_rate: Fraction = Fraction(1 << 20)
    harvest_deadline_ms: int = 2000
    collect_entropy: bool = False
    actions: list[AdversaryAction] = field(default_factory=list)
    # depletion-only knobs
    flood_rate: int = 1000
    duration_s: int = 10
    honest_clients: int = 3
    throttle_enabled: bool = True


@dataclass(frozen=True)
class RequestOutcome:
    client: int
    request_index: int
    outcome: str


@dataclass
class ScenarioReport:
    kind: str
    seed: int
    outcomes: list[RequestOutcome]
    counters: dict[str, int]
    pool_credited_bits: int
    pool_extracted_bits: int
    pool_credit_floor_bits: int
    source_health: dict[str, str]
    stats: dict[str, dict] | None = None

    def outcome_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for o in self.outcomes:
            counts[o.outcome] = counts.get(o.outcome, 0) + 1
        return dict(sorted(counts.items()))

    def to_text(self) -> str:
        lines = ["# eaas-sim report v1",
                 f"scenario kind={self.kind} seed={self.seed}"]
        for o in self.outcomes:
            lines.append(f"outcome client={o.client} "
                         f"request={o.request_index} result={o.outcome}")
        counters = " ".join(f"{k}={v}" for k, v in sorted(
            self.counters.items()))
        lines.append(f"counters {counters}")
        lines.append(f"pool credited_bits={self.pool_credited_bits} "
                     f"extracted_bits={self.pool_extracted_bits} "
                     f"credit_floor_bits={self.pool_credit_floor_bits}")
        for sid, health in sorted(self.source_health.items()):
            lines.append(f"source id={sid} health={health}")
        if self.stats is not None:
            for name, result in sorted(self.stats.items()):
                lines.append(f"stat {name} statistic="
                             f"{result['statistic']:.6f} "
                             f"pass={str(result['passed']).lower()}")
        summary = {
            "kind": self.kind,
            "seed": self.seed,
            "outcome_counts": self.outcome_counts(),
            "counters": self.counters,
            "pool": {
                "credited_bits": self.pool_credited_bits,
                "extracted_bits": self.pool_extracted_bits,
                "credit_floor_bits": self.pool_credit_floor_bits,
            },
            "source_health": self.source_health,
            "stats": self.stats,
        }
        lines.append("--- summary ---")
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"


_CLIENT_ERRORS = {
    BadServerSignature: "bad-server-signature",
    UnwrapFailure: "unwrap-failure",
    OpenFailure: "open-failure",
    WrongQuantity: "wrong-quantity",
    Stale: "stale",
    MalformedMessage: "malformed-response",
}


class _Simulation:
    """In-process server plus provisioned identities on a shared clock."""

    def __init__(self, spec: ScenarioSpec, seed: int,
                 keypairs: list[crypto.KeyPair] | None = None,
                 n_identities: int | None = None):
        self.spec = spec
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = SimClock()

        sources = [
            SourceSpec(source_id=f"sensor{i}", kind="simulated-sensor",
                       density=spec.source_density,
                       max_rate=spec.source_max_rate,
                       params={"seed": str(seed * 1009 + i)})
            for i in range(spec.n_sources)
        ]
        capacity = (spec.throttle_capacity if spec.throttle_enabled
                    else Fraction(10 ** 12))
        config = ServerConfig(
            max_delta_s=spec.max_delta_s,
            throttle_capacity=capacity,
            throttle_refill_rate=spec.throttle_refill_rate,
            harvest_deadline_ms=spec.harvest_deadline_ms,
            clock_mode="injected",
        )
        self.pool = EntropyPool(self.clock.now)
        register_sources(self.pool, sources)
        self.server_keypair = crypto.generate_keypair()
        ta = TrustedApplication(
            self.server_keypair, self.pool,
            sm_measurement=DEFAULT_PLATFORM_MEASUREMENT,
            clock=self.clock.now,
            rng=self.rng.randbytes,
            max_delta_s=spec.max_delta_s,
            harvest_deadline_ms=spec.harvest_deadline_ms)
        self.service = EntropyService(config, ta, self.clock.now)
        self.server_public = crypto.load_public_key(
            self.service.pubkey_der())

        n = spec.n_clients if n_identities is None else n_identities
        if keypairs is None:
            keypairs = [crypto.generate_keypair() for _ in range(n)]
        self.identities = [
            client_mod.ClientIdentity(keypair=kp,
                                      server_public=self.server_public,
                                      store_path=Path("<sim>"))
            for kp in keypairs[:n]
        ]
        self.credit_floor: int | None = None
        self.delivered = bytearray()

    def note_credit(self) -> None:
        credit = self.pool.credited_bits
        if self.credit_floor is None or credit < self.credit_floor:
            self.credit_floor = credit

    def one_round_trip(self, identity: client_mod.ClientIdentity,
                       delta_s: int | None = None) -> str:
        """Build, serve, verify one honest request; returns outcome."""
        delta_s = self.spec.delta_s if delta_s is None else delta_s
        body, t1 = client_mod.build_request(
            identity, delta_s, rng=self.rng.randbytes,
            clock=self.clock.now, max_delta_s=self.spec.max_delta_s)
        self.clock.advance(1)
        status, reply, _ = self.service.handle_entropy(body)
        self.note_credit()
        if status != 200:
            return reply.decode("ascii", "replace")
        return self.verify(identity, reply, t1, delta_s)

    def verify(self, identity: client_mod.ClientIdentity, reply: bytes,
               t1: int, delta_s: int) -> str:
        try:
            entropy = client_mod.verify_response(
                reply, t1=t1, delta_s=delta_s,
                server_public=self.server_public,
                secret_key=identity.keypair.secret,
                now=self.clock.now())
        except tuple(_CLIENT_ERRORS) as exc:
            return _CLIENT_ERRORS[type(exc)]
        if self.spec.collect_entropy:
            self.delivered += entropy
        return "success"

    def report(self, kind: str, outcomes: list[RequestOutcome],
               with_stats: bool = False) -> ScenarioReport:
        stats = None
        if with_stats and len(self.delivered) >= MIN_INPUT_BYTES:
            stats = {name: {"statistic": r.statistic, "passed": r.passed}
                     for name, r in stats_suite(bytes(self.delivered)).items()}
        return ScenarioReport(
            kind=kind,
            seed=self.seed,
            outcomes=outcomes,
            counters=dict(self.service.counters),
            pool_credited_bits=self.pool.total_credited_bits,
            pool_extracted_bits=8 * self.pool.total_extracted_bytes,
            pool_credit_floor_bits=self.credit_floor or 0,
            source_health={sid: h.value for sid, h in
                           self.pool.status().per_source_health.items()},
            stats=stats)


def run_fleet(n_clients: int, requests_per_client: int, delta_s: int,
              seed: int, *,
              spec: ScenarioSpec | None = None,
              keypairs: list[crypto.KeyPair] | None = None,
              ) -> ScenarioReport:
    """Honest fleet: every client issues its requests in round-robin
    order; failures are data, not exceptions."""
    spec = replace(spec or ScenarioSpec(), kind="fleet",
                   n_clients=n_clients,
                   requests_per_client=requests_per_client,
                   delta_s=delta_s)
    sim = _Simulation(spec, seed, keypairs=keypairs)
    outcomes = []
    index = 0
    for _ in range(requests_per_client):
        for ci, identity in enumerate(sim.identities):
            outcome = sim.one_round_trip(identity)
            outcomes.append(RequestOutcome(ci, index, outcome))
            index += 1
            sim.clock.advance(spec.step_ms)
    return sim.report("fleet", outcomes, with_stats=spec.collect_entropy)


# --- adversary -------------------------------------------------------------


def _flip_byte(data: bytes, pos: int, rng: random.Random) -> bytes:
    out = bytearray(data)
    out[pos] ^= rng.randrange(1, 256)
    return bytes(out)


def _tampered_request_body(identity: client_mod.ClientIdentity,
                           delta_s: int, max_delta_s: int,
                           server_public, kind: AdversaryKind,
                           rng: random.Random) -> bytes:
    """White-box request tamper: mutate one signed field in the plaintext
    request, re-seal under the server key, and recompute the hint where
    the mutated field is the key itself."""
    pub_der = identity.keypair.public_der
    sigma1 = crypto.sign(identity.keypair.secret, crypto.REQUEST_TAG,
                         crypto.request_signing_bytes(pub_der, delta_s))
    hint = wire.fingerprint(pub_der)
    if kind is AdversaryKind.TAMPER_PK:
        # Flip deep inside the modulus so the key still parses; the
        # signature binding is what must catch the swap.
        pos = rng.randrange(len(pub_der) - 120, len(pub_der) - 10)
        pub_der = _flip_byte(pub_der, pos, rng)
        hint = wire.fingerprint(pub_der)
    elif kind is AdversaryKind.TAMPER_DELTA_S:
        delta_s = delta_s + 1 if delta_s < max_delta_s else delta_s - 1
    elif kind is AdversaryKind.TAMPER_SIGMA1:
        sigma1 = _flip_byte(sigma1, rng.randrange(len(sigma1)), rng)
    else:
        raise ValueError(f"not a request tamper kind: {kind}")
    plaintext = wire.encode_request(
        wire.EntropyRequest(client_pub_key=pub_der, delta_s=delta_s,
                            sigma1=sigma1),
        max_delta_s)
    env = crypto.seal_message(server_public, plaintext, rng.randbytes)
    return hint + wire.encode_envelope(env)


def _tamper_envelope_field(encoded: bytes, kind: AdversaryKind,
                           rng: random.Random) -> bytes:
    env = wire.decode_envelope(encoded)
    if kind is AdversaryKind.TAMPER_WRAPPED_KEY:
        env = replace(env, wrapped_key=_flip_byte(
            env.wrapped_key, rng.randrange(len(env.wrapped_key)), rng))
    elif kind is AdversaryKind.TAMPER_NONCE:
        env = replace(env, nonce=_flip_byte(
            env.nonce, rng.randrange(len(env.nonce)), rng))
    elif kind in (AdversaryKind.TAMPER_CIPHERTEXT,
                  AdversaryKind.TAMPER_REQUEST_CIPHERTEXT):
        env = replace(env, ciphertext=_flip_byte(
            env.ciphertext, rng.randrange(len(env.ciphertext)), rng))
    elif kind is AdversaryKind.TAMPER_SIG2:
        if env.sigma2 is None:
            raise ValueError("envelope has no sigma2 to tamper")
        env = replace(env, sigma2=_flip_byte(
            env.sigma2, rng.randrange(len(env.sigma2)), rng))
    else:
        raise ValueError(f"not an envelope tamper kind: {kind}")
    return wire.encode_envelope(env)


_REQUEST_TAMPERS = (AdversaryKind.TAMPER_PK, AdversaryKind.TAMPER_DELTA_S,
                    AdversaryKind.TAMPER_SIGMA1)
_RESPONSE_TAMPERS = (AdversaryKind.TAMPER_WRAPPED_KEY,
                     AdversaryKind.TAMPER_NONCE,
                     AdversaryKind.TAMPER_CIPHERTEXT,
                     AdversaryKind.TAMPER_SIG2)


def run_adversary(scenario: ScenarioSpec, actions: list[AdversaryAction],
                  seed: int, *,
                  keypairs: list[crypto.KeyPair] | None = None,
                  ) -> ScenarioReport:
    """Replay the fleet schedule with a channel adversary applying the
    given actions; the report records which failure each action caused."""
    spec = replace(scenario, kind="adversary", actions=list(actions))
    sim = _Simulation(spec, seed, keypairs=keypairs)
    by_target: dict[int, list[AdversaryAction]] = {}
    for action in actions:
        by_target.setdefault(action.target, []).append(action)

    replay_cache: dict[int, bytes] = {}
    replay_into: dict[int, int] = {}   # request index -> source index
    for action in actions:
        if action.kind is AdversaryKind.REPLAY_RESPONSE:
            replay_into[action.target + 1] = action.target

    outcomes = []
    index = 0
    for _ in range(spec.requests_per_client):
        for ci, identity in enumerate(sim.identities):
            todays = by_target.get(index, [])
            kinds = [a.kind for a in todays]

            body, t1 = client_mod.build_request(
                identity, spec.delta_s, rng=sim.rng.randbytes,
                clock=sim.clock.now, max_delta_s=spec.max_delta_s)

            request_tamper = next(
                (k for k in kinds if k in _REQUEST_TAMPERS), None)
            if request_tamper is not None:
                body = _tampered_request_body(
                    identity, spec.delta_s, spec.max_delta_s,
                    sim.server_public, request_tamper, sim.rng)
            if AdversaryKind.TAMPER_HINT in kinds:
                body = _flip_byte(
                    body, sim.rng.randrange(wire.FINGERPRINT_LEN), sim.rng)
            if AdversaryKind.TAMPER_REQUEST_CIPHERTEXT in kinds:
                hint, env = (body[:wire.FINGERPRINT_LEN],
                             body[wire.FINGERPRINT_LEN:])
                body = hint + _tamper_envelope_field(
                    env, AdversaryKind.TAMPER_REQUEST_CIPHERTEXT, sim.rng)

            if AdversaryKind.DROP in kinds:
                outcomes.append(
                    RequestOutcome(ci, index, "transport-failure"))
                index += 1
                sim.clock.advance(1 + spec.step_ms)
                continue

            if index in replay_into:
                # Adversary answers with a cached earlier response
                # instead of forwarding to the server; if the source
                # request never produced one, the client sees nothing.
                sim.clock.advance(1)
                reply = replay_cache.get(replay_into[index])
                if reply is None:
                    outcome = "transport-failure"
                else:
                    outcome = sim.verify(identity, reply, t1, spec.delta_s)
                outcomes.append(RequestOutcome(ci, index, outcome))
                index += 1
                sim.clock.advance(spec.step_ms)
                continue

            sim.clock.advance(1)
            status, reply, _ = sim.service.handle_entropy(body)
            sim.note_credit()
            if status != 200:
                outcomes.append(RequestOutcome(
                    ci, index, reply.decode("ascii", "replace")))
                index += 1
                sim.clock.advance(spec.step_ms)
                continue

            replay_cache[index] = reply
            for kind in kinds:
                if kind in _RESPONSE_TAMPERS:
                    reply = _tamper_envelope_field(reply, kind, sim.rng)
            for action in todays:
                if action.kind is AdversaryKind.DELAY:
                    sim.clock.advance(action.parameter or 1000)

            outcome = sim.verify(identity, reply, t1, spec.delta_s)
            outcomes.append(RequestOutcome(ci, index, outcome))
            index += 1
            sim.clock.advance(spec.step_ms)
    return sim.report("adversary", outcomes)


# --- depletion --------------------------------------------------------------


def depletion_scenario(flood_rate: int, duration_s: int,
                       honest_clients: int, seed: int = 0, *,
                       spec: ScenarioSpec | None = None,
                       keypairs: list[crypto.KeyPair] | None = None,
                       ) -> ScenarioReport:
    """One attacker fingerprint floods valid requests while honest
    clients make one request each, spread across the run."""
    spec = replace(spec or ScenarioSpec(source_max_rate=Fraction(256)),
                   kind="depletion", flood_rate=flood_rate,
                   duration_s=duration_s, honest_clients=honest_clients)
    sim = _Simulation(spec, seed, keypairs=keypairs,
                      n_identities=honest_clients + 1)
    attacker, honest = sim.identities[0], sim.identities[1:]

    # The attacker replays one prebuilt valid request; nothing in the
    # protocol stops request replay, and it keeps the flood cheap.
    attack_body, _ = client_mod.build_request(
        attacker, spec.delta_s, rng=sim.rng.randbytes,
        clock=sim.clock.now, max_delta_s=spec.max_delta_s)

    duration_ms = duration_s * 1000
    events: list[tuple[int, int, str]] = []
    n_attacks = flood_rate * duration_s
    for k in range(n_attacks):
        events.append((k * duration_ms // n_attacks, 0, "attack"))
    for j in range(honest_clients):
        events.append(((j + 1) * duration_ms // (honest_clients + 1),
                       j, "honest"))
    events.sort(key=lambda e: (e[0], e[2] == "honest", e[1]))

    outcomes = []
    attacker_granted = 0
    base = sim.clock.now()
    for index, (t, who, role) in enumerate(events):
        if base + t > sim.clock.now():
            sim.clock.set(base + t)
        if role == "attack":
            status, reply, _ = sim.service.handle_entropy(attack_body)
            sim.note_credit()
            if status == 200:
                attacker_granted += 1
            outcome = ("granted" if status == 200
                       else reply.decode("ascii", "replace"))
            outcomes.append(RequestOutcome(-1, index, f"attacker-{outcome}"))
        else:
            outcome = sim.one_round_trip(honest[who])
            outcomes.append(RequestOutcome(who, index, outcome))
    report = sim.report("depletion", outcomes)
    report.counters["attacker_granted"] = attacker_granted
    return report


# --- scenario files and CLI --------------------------------------------------


def parse_scenario(text: str) -> ScenarioSpec:
    """Flat key = value scenario description; see sample files."""
    spec = ScenarioSpec()
    actions: list[tuple[int, AdversaryAction]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key.startswith("action."):
                order = int(key.split(".", 1)[1])
                kind_name, _, rest = value.partition(":")
                target_str, _, param = rest.partition(":")
                actions.append((order, AdversaryAction(
                    kind=AdversaryKind(kind_name),
                    target=int(target_str),
                    parameter=int(param) if param else None)))
            elif key == "kind":
                spec.kind = value
            elif key in ("n_clients", "requests_per_client", "delta_s",
                         "max_delta_s", "step_ms", "n_sources",
                         "harvest_deadline_ms", "flood_rate", "duration_s",
                         "honest_clients"):
                setattr(spec, key, int(value))
            elif key in ("throttle_capacity", "throttle_refill_rate",
                         "source_density", "source_max_rate"):
                setattr(spec, key, Fraction(value))
            elif key == "throttle_enabled":
                spec.throttle_enabled = value.lower() in ("1", "true", "yes")
            elif key == "collect_entropy":
                spec.collect_entropy = value.lower() in ("1", "true", "yes")
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    spec.actions = [a for _, a in sorted(actions, key=lambda p: p[0])]
    if spec.kind not in ("fleet", "adversary", "depletion"):
        raise ConfigError(f"unknown scenario kind {spec.kind!r}")
    return spec


def run_scenario(spec: ScenarioSpec, seed: int) -> ScenarioReport:
    if spec.kind == "fleet":
        return run_fleet(spec.n_clients, spec.requests_per_client,
                         spec.delta_s, seed, spec=spec)
    if spec.kind == "adversary":
        return run_adversary(spec, spec.actions, seed)
    return depletion_scenario(spec.flood_rate, spec.duration_s,
                              spec.honest_clients, seed, spec=spec)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="eaas-sim",
                                     description="EaaS fleet simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("--scenario", required=True, type=Path)
    p_run.add_argument("--seed", required=True, type=int)
    p_run.add_argument("--report", type=Path,
                       help="write the report here (default stdout)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    spec = parse_scenario(args.scenario.read_text())
    report = run_scenario(spec, args.seed)
    text = report.to_text()
    if args.report:
        args.report.write_text(text)
        print(f"report written to {args.report}")
    else:
        print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
