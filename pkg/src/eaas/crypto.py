"""Hybrid-envelope primitives: RSA-3072 signatures and key wrapping,
AES-128-GCM payload encryption.

Signatures are RSA-PSS over SHA-256 and always cover a domain-separation
tag so a signature made for one protocol role can never verify in another.
Key wrapping is RSA-OAEP over SHA-256; a 3072-bit key can carry at most
OAEP_CAPACITY (318) plaintext bytes, which is why payloads travel under a
fixed-length symmetric session key instead.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import InvalidKey, OpenFailure, RngFailure, UnwrapFailure
from .wire import NONCE_LEN, SealedEnvelope

RSA_BITS = 3072
RSA_BYTES = RSA_BITS // 8                      # 384
SESSION_KEY_LEN = 16                           # AES-128
OAEP_CAPACITY = RSA_BYTES - 2 * 32 - 2         # 318 bytes for SHA-256 OAEP

REQUEST_TAG = b"EAAS-REQ-V1"
RESPONSE_TAG = b"EAAS-RESP-V1"
QUOTE_TAG = b"EAAS-QUOTE-V1"

Rng = Callable[[int], bytes]

_PSS = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=32)
_OAEP = padding.OAEP(mgf=padding.MGF1(hashes.SHA256()),
                     algorithm=hashes.SHA256(), label=None)


@dataclass(frozen=True)
class KeyPair:
    """An RSA-3072 private key together with its public half."""

    secret: rsa.RSAPrivateKey
    public: rsa.RSAPublicKey

    @property
    def public_der(self) -> bytes:
        return public_key_der(self.public)


def generate_keypair() -> KeyPair:
    """Generate a fresh RSA-3072 pair.

    Key generation randomness comes from the backend CSPRNG (OpenSSL,
    itself fed by the OS); it is the one primitive whose randomness this
    package cannot inject.
    """
    try:
        secret = rsa.generate_private_key(public_exponent=65537,
                                          key_size=RSA_BITS)
    except Exception as exc:           # pragma: no cover - backend failure
        raise RngFailure(f"key generation failed: {exc}") from exc
    return KeyPair(secret=secret, public=secret.public_key())


def public_key_der(pub: rsa.RSAPublicKey) -> bytes:
    return pub.public_bytes(serialization.Encoding.DER,
                            serialization.PublicFormat.SubjectPublicKeyInfo)


def private_key_der(keypair: KeyPair) -> bytes:
    return keypair.secret.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption())


def load_public_key(data: bytes) -> rsa.RSAPublicKey:
    """Load a public key from DER (or PEM text armor)."""
    key = None
    for loader in (serialization.load_der_public_key,
                   serialization.load_pem_public_key):
        try:
            key = loader(data)
            break
        except Exception:
            continue
    if key is None:
        raise InvalidKey("public key does not parse as DER or PEM")
    if not isinstance(key, rsa.RSAPublicKey):
        raise InvalidKey("public key is not RSA")
    if key.key_size != RSA_BITS:
        raise InvalidKey(f"expected {RSA_BITS}-bit key, got {key.key_size}")
    return key


def load_private_key(data: bytes) -> KeyPair:
    """Load a private key from DER (or PEM text armor)."""
    key = None
    for loader in (serialization.load_der_private_key,
                   serialization.load_pem_private_key):
        try:
            key = loader(data, password=None)
            break
        except Exception:
            continue
    if key is None:
        raise InvalidKey("private key does not parse as DER or PEM")
    if not isinstance(key, rsa.RSAPrivateKey):
        raise InvalidKey("private key is not RSA")
    if key.key_size != RSA_BITS:
        raise InvalidKey(f"expected {RSA_BITS}-bit key, got {key.key_size}")
    return KeyPair(secret=key, public=key.public_key())


# --- signing ---------------------------------------------------------------

def sign(secret: rsa.RSAPrivateKey, domain_tag: bytes, msg: bytes) -> bytes:
    """RSA-PSS-SHA-256 signature over domain_tag || msg; 384 bytes."""
    return secret.sign(domain_tag + msg, _PSS, hashes.SHA256())


def verify(public: rsa.RSAPublicKey, domain_tag: bytes, msg: bytes,
           sig: bytes) -> bool:
    """True iff sig is a valid signature of domain_tag || msg under public.

    Rejection is a value, not a fault.
    """
    try:
        public.verify(sig, domain_tag + msg, _PSS, hashes.SHA256())
        return True
    except InvalidSignature:
        return False


def request_signing_bytes(pub_key_der: bytes, delta_s: int) -> bytes:
    """The sigma1 binding: public key and requested quantity."""
    return pub_key_der + delta_s.to_bytes(4, "big")


def envelope_signing_bytes(wrapped_key: bytes, nonce: bytes,
                           ciphertext: bytes) -> bytes:
    """The sigma2 binding: wrapped key, nonce, and ciphertext."""
    return wrapped_key + nonce + ciphertext


def quote_signing_bytes(nonce: bytes, sm_measurement: bytes,
                        ta_measurement: bytes, quote_time: int) -> bytes:
    return (nonce + sm_measurement + ta_measurement
            + quote_time.to_bytes(8, "big"))


# --- key wrapping ----------------------------------------------------------

def wrap_key(recipient: rsa.RSAPublicKey, session_key: bytes) -> bytes:
    """RSA-OAEP-SHA-256 encryption of a 16-byte session key; 384 bytes."""
    if len(session_key) != SESSION_KEY_LEN:
        raise ValueError(f"session key must be {SESSION_KEY_LEN} bytes")
    return recipient.encrypt(session_key, _OAEP)


def unwrap_key(secret: rsa.RSAPrivateKey, wrapped: bytes) -> bytes:
    """Inverse of wrap_key. Wrong key and corruption are indistinguishable."""
    if len(wrapped) != RSA_BYTES:
        raise UnwrapFailure(f"wrapped key must be {RSA_BYTES} bytes")
    try:
        key = secret.decrypt(wrapped, _OAEP)
    except Exception as exc:
        raise UnwrapFailure("session key unwrap failed") from exc
    if len(key) != SESSION_KEY_LEN:
        raise UnwrapFailure("unwrapped key has wrong length")
    return key


# --- payload encryption ----------------------------------------------------

def seal_payload(session_key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    """AES-128-GCM; output is |plaintext| + 16 bytes (tag appended)."""
    if len(session_key) != SESSION_KEY_LEN:
        raise ValueError(f"session key must be {SESSION_KEY_LEN} bytes")
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    return AESGCM(session_key).encrypt(nonce, plaintext, None)


def open_payload(session_key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    if len(session_key) != SESSION_KEY_LEN:
        raise ValueError(f"session key must be {SESSION_KEY_LEN} bytes")
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    try:
        return AESGCM(session_key).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise OpenFailure("payload authentication failed") from exc


# --- hybrid composition ----------------------------------------------------

def seal_message(recipient: rsa.RSAPublicKey, plaintext: bytes,
                 rng: Rng = os.urandom,
                 signer: rsa.RSAPrivateKey | None = None) -> SealedEnvelope:
    """Seal plaintext under a fresh session key wrapped for recipient.

    With a signer, sigma2 covers wrapped_key || nonce || ciphertext under
    RESPONSE_TAG; without one the envelope is left unsigned (request
    direction).
    """
    session_key = rng(SESSION_KEY_LEN)
    nonce = rng(NONCE_LEN)
    ciphertext = seal_payload(session_key, nonce, plaintext)
    wrapped = wrap_key(recipient, session_key)
    sigma2 = None
    if signer is not None:
        sigma2 = sign(signer, RESPONSE_TAG,
                      envelope_signing_bytes(wrapped, nonce, ciphertext))
    return SealedEnvelope(wrapped_key=wrapped, nonce=nonce,
                          ciphertext=ciphertext, sigma2=sigma2)


def open_message(secret: rsa.RSAPrivateKey, env: SealedEnvelope) -> bytes:
    """Unwrap the session key and open the payload. No signature check."""
    session_key = unwrap_key(secret, env.wrapped_key)
    return open_payload(session_key, env.nonce, env.ciphertext)
