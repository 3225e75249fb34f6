"""Untrusted CA-side service: HTTP transport, throttling, and dispatch
into the trusted core.

The client application peeks only at the cleartext 32-byte fingerprint
hint at the front of the request body; everything else is opaque bytes
handed to the TA. Endpoints:

    POST /v1/entropy   hint(32) || request envelope -> response envelope
    POST /v1/attest    nonce(32)                    -> encoded quote
    GET  /v1/pubkey    -> DER public key

Bodies are raw binary (application/octet-stream). Logs never contain key
material or plaintext entropy.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from dataclasses import dataclass
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import crypto, wire
from .config import ServerConfig, load_config
from .errors import BindFailure, InvalidKey, KeyLoadFailure
from .pool import Clock, EntropyPool, system_clock_ms
from .sources import register_sources
from .trusted import TaCommand, TaStatus, TrustedApplication, encode_command

log = logging.getLogger("eaas.server")

OCTET_STREAM = "application/octet-stream"

# Total mapping from TA error codes to HTTP status and error token.
STATUS_MAP: dict[TaStatus, tuple[int, str]] = {
    TaStatus.UNKNOWN_COMMAND: (500, "internal"),
    TaStatus.MALFORMED: (400, "malformed"),
    TaStatus.DECRYPT_FAILURE: (400, "decrypt-failure"),
    TaStatus.BAD_SIGNATURE: (400, "bad-signature"),
    TaStatus.FIELD_OUT_OF_RANGE: (400, "field-out-of-range"),
    TaStatus.HINT_MISMATCH: (400, "hint-mismatch"),
    TaStatus.ENTROPY_DEPLETED: (503, "entropy-depleted"),
    TaStatus.NO_SOURCES: (503, "entropy-depleted"),
}


@dataclass
class _Bucket:
    tokens: Fraction
    last_refill_ms: int


class ThrottleTable:
    """Per-fingerprint token buckets: capacity C, refill r tokens/second.

    Exact rational arithmetic so simulated traces match a discrete-event
    oracle grant-for-grant.
    """

    def __init__(self, capacity: Fraction, refill_rate: Fraction):
        self.capacity = Fraction(capacity)
        self.refill_rate = Fraction(refill_rate)
        self._buckets: dict[bytes, _Bucket] = {}
        self._lock = threading.Lock()

    def check(self, fp: bytes, now_ms: int) -> tuple[bool, int]:
        """Refill by elapsed time, then try to consume one token.

        Returns (allowed, retry_after_seconds); a deny consumes nothing.
        """
        with self._lock:
            bucket = self._buckets.get(fp)
            if bucket is None:
                bucket = _Bucket(tokens=self.capacity, last_refill_ms=now_ms)
                self._buckets[fp] = bucket
            elapsed = now_ms - bucket.last_refill_ms
            if elapsed > 0:   # a clock stepping backwards never refills
                bucket.tokens = min(
                    self.capacity,
                    bucket.tokens + self.refill_rate * Fraction(elapsed, 1000))
                bucket.last_refill_ms = now_ms
            if bucket.tokens >= 1:
                bucket.tokens -= 1
                return True, 0
            deficit = (1 - bucket.tokens) / self.refill_rate
            return False, -(-deficit.numerator // deficit.denominator)


class EntropyService:
    """Transport-agnostic request handling; the HTTP layer and the
    in-process harness both drive this object."""

    def __init__(self, config: ServerConfig, ta: TrustedApplication,
                 clock: Clock = system_clock_ms):
        self._config = config
        self._ta = ta
        self._clock = clock
        self._throttle = ThrottleTable(config.throttle_capacity,
                                       config.throttle_refill_rate)
        self.counters = {"allowed": 0, "throttled": 0, "depleted": 0,
                         "rejected": 0}

    def pubkey_der(self) -> bytes:
        reply = self._ta.ta_invoke(encode_command(TaCommand.GET_PUBKEY))
        return reply[1:]

    def handle_entropy(self, body: bytes,
                       now: int | None = None) -> tuple[int, bytes, dict]:
        now = self._clock() if now is None else now
        if len(body) < wire.FINGERPRINT_LEN:
            self.counters["rejected"] += 1
            return 400, b"malformed", {}
        hint = body[:wire.FINGERPRINT_LEN]
        allowed, retry_after = self._throttle.check(hint, now)
        if not allowed:
            self.counters["throttled"] += 1
            log.info("throttled fp=%s retry_after=%ds",
                     hint[:4].hex(), retry_after)
            return 429, b"throttled", {"Retry-After": str(retry_after)}
        reply = self._ta.ta_invoke(
            encode_command(TaCommand.HANDLE_REQUEST, body))
        status = TaStatus(reply[0])
        if status is TaStatus.OK:
            self.counters["allowed"] += 1
            log.info("served fp=%s bytes=%d", hint[:4].hex(),
                     len(reply) - 1)
            return 200, reply[1:], {}
        http_status, token = STATUS_MAP[status]
        if http_status == 503:
            self.counters["depleted"] += 1
        else:
            self.counters["rejected"] += 1
        log.info("refused fp=%s error=%s", hint[:4].hex(), token)
        return http_status, token.encode(), {}

    def handle_attest(self, body: bytes) -> tuple[int, bytes, dict]:
        reply = self._ta.ta_invoke(encode_command(TaCommand.ATTEST, body))
        status = TaStatus(reply[0])
        if status is TaStatus.OK:
            return 200, reply[1:], {}
        http_status, token = STATUS_MAP[status]
        return http_status, token.encode(), {}


def load_or_create_keypair(key_file: Path | None) -> crypto.KeyPair:
    """Load the server identity, generating and persisting it on first
    boot when a path is configured but absent."""
    if key_file is None:
        return crypto.generate_keypair()
    if key_file.exists():
        try:
            keypair = crypto.load_private_key(key_file.read_bytes())
        except InvalidKey as exc:
            raise KeyLoadFailure(f"{key_file}: {exc}") from exc
        return keypair
    keypair = crypto.generate_keypair()
    key_file.parent.mkdir(parents=True, exist_ok=True)
    key_file.write_bytes(crypto.private_key_der(keypair))
    log.info("generated new identity key at %s fp=%s", key_file,
             wire.fingerprint(keypair.public_der)[:8].hex())
    return keypair


def build_service(config: ServerConfig,
                  clock: Clock | None = None) -> EntropyService:
    """Assemble pool, trusted application, and service from config."""
    if clock is None:
        if config.clock_mode == "injected":
            raise KeyLoadFailure(
                "clock = injected requires a programmatic clock")
        clock = system_clock_ms
    keypair = load_or_create_keypair(config.key_file)
    pool = EntropyPool(clock)
    register_sources(pool, config.sources)
    ta = TrustedApplication(
        keypair, pool,
        sm_measurement=config.sm_measurement,
        clock=clock,
        max_delta_s=config.max_delta_s,
        harvest_deadline_ms=config.harvest_deadline_ms)
    return EntropyService(config, ta, clock)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def _reply(self, status: int, body: bytes, headers: dict) -> None:
        self.send_response(status)
        self.send_header("Content-Type", OCTET_STREAM)
        self.send_header("Content-Length", str(len(body)))
        for name, value in headers.items():
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length)

    def do_GET(self):
        if self.path == "/v1/pubkey":
            self._reply(200, self.server.service.pubkey_der(), {})
        else:
            self._reply(404, b"not-found", {})

    def do_POST(self):
        body = self._read_body()
        if self.path == "/v1/entropy":
            status, reply, headers = self.server.service.handle_entropy(body)
        elif self.path == "/v1/attest":
            status, reply, headers = self.server.service.handle_attest(body)
        else:
            status, reply, headers = 404, b"not-found", {}
        self._reply(status, reply, headers)

    def log_message(self, fmt, *args):
        log.debug("http %s", fmt % args)


class TesServer:
    """Running HTTP service wrapper with graceful shutdown."""

    def __init__(self, config: ServerConfig,
                 service: EntropyService | None = None):
        self.service = service or build_service(config)
        try:
            self._httpd = ThreadingHTTPServer(
                (config.listen_host, config.listen_port), _Handler)
        except OSError as exc:
            raise BindFailure(
                f"{config.listen_host}:{config.listen_port}: {exc}") from exc
        self._httpd.service = self.service
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        log.info("listening on %s", self.url)

    def serve_forever(self) -> None:
        log.info("listening on %s", self.url)
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()


def serve(config: ServerConfig) -> TesServer:
    """Build and start a server in a background thread."""
    server = TesServer(config)
    server.start()
    return server


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tes-server", description="Trusted entropy server")
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(message)s")
    config = load_config(args.config)
    server = TesServer(config)

    def _stop(signum, frame):
        log.info("signal %d, shutting down", signum)
        threading.Thread(target=server.shutdown).start()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
