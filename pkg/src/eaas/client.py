"""Client SDK for constrained-device firmware: provisioning, request
construction, the response verification chain, and quote checking.

Verification order is fixed and security-relevant: server signature
first, then decryption, then semantic checks, so nothing about payload
contents is revealed to an unauthenticated peer.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import rsa

from . import crypto, wire
from .errors import (
    BadServerSignature,
    FieldOutOfRange,
    InvalidKey,
    MissingServerKey,
    QuoteRejected,
    Stale,
    StoreCorrupt,
    TransportError,
    WrongQuantity,
)
from .pool import Clock, system_clock_ms

log = logging.getLogger("eaas.client")

CLIENT_KEY_FILE = "client_key.der"
SERVER_KEY_FILE = "server_key.der"

DEFAULT_MAX_FUTURE_SKEW_MS = 30_000
DEFAULT_RETRIES = 3
DEFAULT_TIMEOUT_S = 10.0


@dataclass
class ClientIdentity:
    """A provisioned device: its keypair and the pinned server key."""

    keypair: crypto.KeyPair
    server_public: rsa.RSAPublicKey
    store_path: Path

    @property
    def fingerprint(self) -> bytes:
        return wire.fingerprint(self.keypair.public_der)


def provision(store_path: Path | str,
              server_pubkey_source: Path | str | bytes | None = None,
              ) -> ClientIdentity:
    """Create or load an identity store; idempotent on an existing store.

    The server key is pinned into the store on first use; later calls can
    omit the source.
    """
    store = Path(store_path)
    store.mkdir(parents=True, exist_ok=True)

    key_path = store / CLIENT_KEY_FILE
    if key_path.exists():
        try:
            keypair = crypto.load_private_key(key_path.read_bytes())
        except InvalidKey as exc:
            raise StoreCorrupt(f"{key_path}: {exc}") from exc
    else:
        keypair = crypto.generate_keypair()
        key_path.write_bytes(crypto.private_key_der(keypair))

    server_key_path = store / SERVER_KEY_FILE
    if server_pubkey_source is not None:
        if isinstance(server_pubkey_source, bytes):
            raw = server_pubkey_source
        else:
            raw = Path(server_pubkey_source).read_bytes()
        try:
            server_public = crypto.load_public_key(raw)
        except InvalidKey as exc:
            raise StoreCorrupt(f"server key: {exc}") from exc
        server_key_path.write_bytes(crypto.public_key_der(server_public))
    elif server_key_path.exists():
        try:
            server_public = crypto.load_public_key(
                server_key_path.read_bytes())
        except InvalidKey as exc:
            raise StoreCorrupt(f"{server_key_path}: {exc}") from exc
    else:
        raise MissingServerKey(
            "no pinned server key; pass server_pubkey_source")

    return ClientIdentity(keypair=keypair, server_public=server_public,
                          store_path=store)


def build_request(identity: ClientIdentity, delta_s: int, *,
                  rng: crypto.Rng = os.urandom,
                  clock: Clock = system_clock_ms,
                  max_delta_s: int = wire.DEFAULT_MAX_DELTA_S,
                  ) -> tuple[bytes, int]:
    """Build the POST body (hint || sealed request envelope).

    Returns (body, t1). t1 stays client-local for the freshness check and
    is never transmitted.
    """
    if not 1 <= delta_s <= max_delta_s:
        raise FieldOutOfRange(f"delta_s {delta_s} outside [1, {max_delta_s}]")
    t1 = clock()
    pub_der = identity.keypair.public_der
    sigma1 = crypto.sign(identity.keypair.secret, crypto.REQUEST_TAG,
                         crypto.request_signing_bytes(pub_der, delta_s))
    plaintext = wire.encode_request(
        wire.EntropyRequest(client_pub_key=pub_der, delta_s=delta_s,
                            sigma1=sigma1),
        max_delta_s)
    envelope = crypto.seal_message(identity.server_public, plaintext, rng)
    body = wire.fingerprint(pub_der) + wire.encode_envelope(envelope)
    return body, t1


def verify_response(envelope_bytes: bytes, *, t1: int, delta_s: int,
                    server_public: rsa.RSAPublicKey,
                    secret_key: rsa.RSAPrivateKey,
                    now: int | None = None,
                    max_future_skew_ms: int = DEFAULT_MAX_FUTURE_SKEW_MS,
                    clock: Clock = system_clock_ms) -> bytes:
    """Run the verification chain and return the entropy bytes.

    Order: sigma2, unwrap, open, quantity, freshness (t2 > t1 strictly,
    and t2 not further than max_future_skew_ms past the local clock).
    """
    env = wire.decode_envelope(envelope_bytes)
    if env.sigma2 is None:
        raise BadServerSignature("response envelope is unsigned")
    if not crypto.verify(server_public, crypto.RESPONSE_TAG,
                         crypto.envelope_signing_bytes(
                             env.wrapped_key, env.nonce, env.ciphertext),
                         env.sigma2):
        raise BadServerSignature("sigma2 does not verify")
    session_key = crypto.unwrap_key(secret_key, env.wrapped_key)
    payload = crypto.open_payload(session_key, env.nonce, env.ciphertext)
    response = wire.decode_response_payload(payload)
    if len(response.entropy) != delta_s:
        raise WrongQuantity(
            f"got {len(response.entropy)} bytes, requested {delta_s}")
    if response.t2 <= t1:
        raise Stale(f"t2 {response.t2} <= t1 {t1}")
    now = clock() if now is None else now
    if response.t2 > now + max_future_skew_ms:
        raise Stale(f"t2 {response.t2} is {response.t2 - now} ms in the "
                    "future")
    return response.entropy


def _post(url: str, body: bytes, timeout: float) -> tuple[int, bytes, dict]:
    req = urllib.request.Request(
        url, data=body, method="POST",
        headers={"Content-Type": "application/octet-stream"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read(), dict(resp.headers)
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read(), dict(exc.headers)


def request_entropy(identity: ClientIdentity, server_url: str,
                    delta_s: int, *,
                    rng: crypto.Rng = os.urandom,
                    clock: Clock = system_clock_ms,
                    max_delta_s: int = wire.DEFAULT_MAX_DELTA_S,
                    retries: int = DEFAULT_RETRIES,
                    timeout: float = DEFAULT_TIMEOUT_S,
                    sleep=time.sleep) -> bytes:
    """End-to-end fetch: build, POST, verify.

    Retries only on throttling (server-guided delay) and transport
    failures, never on verification failures.
    """
    url = server_url.rstrip("/") + "/v1/entropy"
    last_error: Exception | None = None
    for attempt in range(retries):
        body, t1 = build_request(identity, delta_s, rng=rng, clock=clock,
                                 max_delta_s=max_delta_s)
        try:
            status, reply, headers = _post(url, body, timeout)
        except (urllib.error.URLError, OSError, ConnectionError) as exc:
            last_error = exc
            log.warning("transport failure (attempt %d): %s",
                        attempt + 1, exc)
            sleep(0.2 * (attempt + 1))
            continue
        if status == 429:
            delay = float(headers.get("Retry-After", "1"))
            log.info("throttled, retrying in %.1fs", delay)
            last_error = TransportError("throttled")
            sleep(delay)
            continue
        if status != 200:
            raise TransportError(
                f"server returned {status}: {reply[:64]!r}")
        return verify_response(reply, t1=t1, delta_s=delta_s,
                               server_public=identity.server_public,
                               secret_key=identity.keypair.secret,
                               clock=clock)
    raise TransportError(f"retry budget exhausted: {last_error}")


def fetch_server_pubkey(server_url: str,
                        timeout: float = DEFAULT_TIMEOUT_S) -> bytes:
    url = server_url.rstrip("/") + "/v1/pubkey"
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"cannot fetch server key: {exc}") from exc


def verify_quote(quote: wire.AttestationQuote | bytes, *, nonce: bytes,
                 expected_sm: bytes, expected_ta: bytes,
                 attestation_pk: rsa.RSAPublicKey) -> None:
    """Accept iff the signature is valid, the nonce echoes, and both
    measurements match. Raises QuoteRejected(reason) otherwise."""
    if isinstance(quote, bytes):
        quote = wire.decode_quote(quote)
    if not crypto.verify(attestation_pk, crypto.QUOTE_TAG,
                         crypto.quote_signing_bytes(
                             quote.nonce, quote.sm_measurement,
                             quote.ta_measurement, quote.quote_time),
                         quote.signature):
        raise QuoteRejected("sig")
    if quote.nonce != nonce:
        raise QuoteRejected("nonce")
    if (quote.sm_measurement != expected_sm
            or quote.ta_measurement != expected_ta):
        raise QuoteRejected("measurement")


def request_attestation(server_url: str, *, expected_sm: bytes,
                        expected_ta: bytes,
                        attestation_pk: rsa.RSAPublicKey | None = None,
                        rng: crypto.Rng = os.urandom,
                        timeout: float = DEFAULT_TIMEOUT_S,
                        ) -> wire.AttestationQuote:
    """Challenge the server with a fresh nonce and verify its quote."""
    if attestation_pk is None:
        attestation_pk = crypto.load_public_key(
            fetch_server_pubkey(server_url, timeout))
    nonce = rng(wire.QUOTE_NONCE_LEN)
    url = server_url.rstrip("/") + "/v1/attest"
    status, reply, _ = _post(url, nonce, timeout)
    if status != 200:
        raise TransportError(f"attestation returned {status}")
    quote = wire.decode_quote(reply)
    verify_quote(quote, nonce=nonce, expected_sm=expected_sm,
                 expected_ta=expected_ta, attestation_pk=attestation_pk)
    return quote


# --- CLI --------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="eaas-client",
                                     description="EaaS IoT client")
    sub = parser.add_subparsers(dest="command", required=True)

    p_prov = sub.add_parser("provision", help="create or load an identity")
    p_prov.add_argument("--store", required=True, type=Path)
    p_prov.add_argument("--server-key", type=Path,
                        help="DER or PEM server public key to pin")

    p_fetch = sub.add_parser("fetch", help="request entropy")
    p_fetch.add_argument("--store", required=True, type=Path)
    p_fetch.add_argument("--url", required=True)
    p_fetch.add_argument("--bytes", required=True, type=int, dest="n_bytes")
    p_fetch.add_argument("--out", type=Path,
                         help="write raw bytes here instead of hex stdout")
    p_fetch.add_argument("--max-delta-s", type=int,
                         default=wire.DEFAULT_MAX_DELTA_S)

    p_att = sub.add_parser("attest", help="challenge the server")
    p_att.add_argument("--url", required=True)
    p_att.add_argument("--expect-ta", required=True,
                       help="expected TA measurement, 64 hex chars")
    p_att.add_argument("--expect-sm", required=True,
                       help="expected platform measurement, 64 hex chars")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.command == "provision":
        identity = provision(args.store, args.server_key)
        print(f"identity fingerprint: {identity.fingerprint.hex()}")
        return 0

    if args.command == "fetch":
        identity = provision(args.store)
        entropy = request_entropy(identity, args.url, args.n_bytes,
                                  max_delta_s=args.max_delta_s)
        if args.out:
            args.out.write_bytes(entropy)
            print(f"wrote {len(entropy)} bytes to {args.out}")
        else:
            print(entropy.hex())
        return 0

    # attest
    quote = request_attestation(
        args.url,
        expected_sm=bytes.fromhex(args.expect_sm),
        expected_ta=bytes.fromhex(args.expect_ta))
    print(f"quote accepted: time={quote.quote_time} "
          f"ta={quote.ta_measurement.hex()[:16]}…")
    return 0


if __name__ == "__main__":
    sys.exit(main())
