"""Entropy-as-a-Service reference stack.

A trusted entropy server with a simulated TA/CA split, a client SDK for
constrained devices, and a deterministic fleet/adversary harness for
validating the protocol's security behavior.
"""

from .client import ClientIdentity, provision, request_entropy, verify_quote
from .crypto import KeyPair, generate_keypair
from .errors import EaasError
from .pool import EntropyPool, SourceDescriptor
from .server import EntropyService, TesServer, serve
from .trusted import TrustedApplication
from .wire import (
    AttestationQuote,
    EntropyRequest,
    EntropyResponse,
    SealedEnvelope,
    fingerprint,
)

__version__ = "0.1.0"

__all__ = [
    "AttestationQuote",
    "ClientIdentity",
    "EaasError",
    "EntropyPool",
    "EntropyRequest",
    "EntropyResponse",
    "EntropyService",
    "KeyPair",
    "SealedEnvelope",
    "SourceDescriptor",
    "TesServer",
    "TrustedApplication",
    "fingerprint",
    "generate_keypair",
    "provision",
    "request_entropy",
    "serve",
    "verify_quote",
    "__version__",
]
