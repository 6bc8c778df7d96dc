"""Backend, requester, and provider protocol engines.

Both protocols push every expensive check onto the backend.  The provider
only ever runs symmetric primitives over tiny fixed-width messages, and the
per-requester rate limiter sits at the backend in front of anything that
would cost the provider energy.

Proxy flow: the requester authenticates to the backend with a signed
challenge-response, the backend rate-limits, then forwards a 9-byte MACed
request to the provider itself.  The request carries no counter; backend
and provider keep it in lockstep, and the provider resynchronises through
a bounded forward window when a message goes missing.

Ticket flow: same handshake, but the backend hands back a MACed ticket
bound to a hash commitment.  The requester redeems it at the provider
directly, revealing the committed secret.  The provider keeps a small
replay window over ticket counters instead of implicit state.

Engines here are pure state machines over bytes: no clocks, no sockets.
The simulator and the tests drive them and own all timing.
"""

from dataclasses import dataclass
from enum import Enum
from random import Random
from typing import Dict, List, Mapping, Optional, Set, Tuple

from .crypto import (
    Certificate,
    CertificateAuthority,
    Identity,
    TicketCommitment,
    cert_verify,
    dm_hash,
    mac_tag,
    mac_verify,
    new_identity,
    new_nonce,
    sig_verify,
    sign,
)
from .energy import EnergyLedger
from .limiter import Decision, LimiterTable
from .messages import (
    COUNTER_MAX,
    BackendChallenge,
    MalformedMessage,
    ProxyRequest,
    RequesterHello,
    RequestThrottled,
    ServiceRequest,
    Ticket,
    TicketGrant,
    TicketRedeem,
    TicketRequest,
    WrongLength,
    challenge_sig_input,
    decode_asym_request,
    decode_handshake,
    decode_proxy_request,
    decode_ticket_redeem,
    encode_asym_request,
    encode_handshake,
    encode_provider_request,
    grant_sig_input,
    proxy_mac_input,
    service_sig_input,
    ticket_mac_input,
    ticket_request_sig_input,
)


class Protocol(Enum):
    PROXY = "p1"
    TICKET = "p2"
    # Comparison baseline: no backend, the requester authenticates to the
    # provider directly.  Modelled by cost only (a big request and an
    # expensive verification), not by running real public-key handshakes
    # on the provider.
    ASYMMETRIC = "asym"


class ProtocolError(Exception):
    """Base for everything the engines refuse to process."""


class BadSignature(ProtocolError):
    """Signature matches no open session or does not verify."""


class BadCertificate(ProtocolError):
    """Certificate missing when required, or authority check failed."""


class NonceMismatch(ProtocolError):
    """Response is not bound to the nonce we are waiting on."""


class UnknownSession(ProtocolError):
    """Response arrived with no request in flight."""


class UnexpectedMessage(ProtocolError):
    """Well-formed message sent in a direction it never travels."""


class UnknownProvider(ProtocolError):
    """Backend holds no key for the named provider."""


class CounterExhausted(ProtocolError):
    """Per-provider counter space is spent; keys must be rotated."""


# ---------------------------------------------------------------------------
# provider outcomes and replay window
# ---------------------------------------------------------------------------

class RejectReason(Enum):
    MALFORMED = "malformed"
    BAD_MAC = "bad_mac"
    STALE_COUNTER = "stale_counter"
    REPLAYED = "replayed"
    OUTSIDE_WINDOW = "outside_window"
    UNKNOWN_SERVICE = "unknown_service"


@dataclass(frozen=True)
class Serve:
    service_id: int


@dataclass(frozen=True)
class Reject:
    reason: RejectReason


class CacheDecision(Enum):
    ACCEPT = "accept"
    DUPLICATE = "duplicate"
    TOO_OLD = "too_old"


class ReplayCache:
    """Sliding window over accepted counters.

    Remembers every counter within ``validity_distance`` of the highest one
    accepted so far; anything older is rejected outright, so memory stays
    bounded no matter how long the provider runs.
    """

    def __init__(self, validity_distance: int = 16):
        if validity_distance < 0:
            raise ValueError("validity distance must be non-negative")
        self.validity_distance = validity_distance
        self._seen: Set[int] = set()
        self._max: Optional[int] = None

    def admit(self, counter: int) -> CacheDecision:
        if counter in self._seen:
            return CacheDecision.DUPLICATE
        if self._max is not None and self._max - counter > self.validity_distance:
            return CacheDecision.TOO_OLD
        self._seen.add(counter)
        if self._max is None or counter > self._max:
            self._max = counter
            floor = self._max - self.validity_distance
            self._seen = {c for c in self._seen if c >= floor}
        return CacheDecision.ACCEPT

    def __len__(self) -> int:
        return len(self._seen)


# ---------------------------------------------------------------------------
# backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Session:
    requester_id: int
    hello_nonce: bytes
    challenge_nonce: bytes
    needs_cert: bool


@dataclass(frozen=True)
class BackendResult:
    """What the backend wants transmitted after one inbound datagram."""

    reply: Optional[bytes] = None
    forward: Optional[Tuple[int, bytes]] = None
    requester_id: Optional[int] = None
    service_id: Optional[int] = None
    served: bool = False
    throttled: bool = False


@dataclass(frozen=True)
class IssuedRecord:
    """Provenance of one grant, kept only when recording is switched on."""

    protocol: Protocol
    provider_id: int
    service_id: int
    counter: int
    requester_id: int


class BackendCore:
    """Authenticates requesters, rate-limits them, and issues grants.

    Sessions are keyed by the challenge nonce and consumed on use.  A
    service or ticket request names no session explicitly; it is matched
    by trying its signature against every open session, which is exactly
    the binding the signature was built to prove.  Each requester holds at
    most one open session; a new hello replaces the old one.
    """

    def __init__(
        self,
        identity: Identity,
        authority_key: bytes,
        limiter: LimiterTable,
        rng: Random,
        record_issued: bool = False,
    ):
        self.identity = identity
        self.authority_key = authority_key
        self.limiter = limiter
        self._rng = rng
        self._sessions: Dict[bytes, _Session] = {}
        self._session_by_requester: Dict[int, bytes] = {}
        self._known_keys: Dict[int, bytes] = {}
        self._provider_keys: Dict[int, bytes] = {}
        self._next_counter: Dict[int, int] = {}
        self.issued: Optional[List[IssuedRecord]] = [] if record_issued else None

    def register_provider(self, provider_id: int, key: bytes) -> None:
        self._provider_keys[provider_id] = key
        self._next_counter[provider_id] = 0

    def know_requester(self, requester_id: int, public_key: bytes) -> None:
        """Pre-seed the verification-key cache, skipping the first-contact
        certificate exchange."""
        self._known_keys[requester_id] = public_key

    def open_sessions(self) -> int:
        return len(self._sessions)

    def handle_datagram(self, data: bytes, now_s: float) -> BackendResult:
        msg = decode_handshake(data)
        if isinstance(msg, RequesterHello):
            return self._handle_hello(msg)
        if isinstance(msg, ServiceRequest):
            return self._handle_service_request(msg, now_s)
        if isinstance(msg, TicketRequest):
            return self._handle_ticket_request(msg, now_s)
        raise UnexpectedMessage(f"{type(msg).__name__} sent to backend")

    def _handle_hello(self, msg: RequesterHello) -> BackendResult:
        stale = self._session_by_requester.pop(msg.requester_id, None)
        if stale is not None:
            self._sessions.pop(stale, None)
        challenge_nonce = new_nonce(self._rng)
        needs_cert = msg.requester_id not in self._known_keys
        session = _Session(msg.requester_id, msg.nonce, challenge_nonce, needs_cert)
        self._sessions[challenge_nonce] = session
        self._session_by_requester[msg.requester_id] = challenge_nonce
        reply = BackendChallenge(
            nonce=challenge_nonce,
            wants_cert=needs_cert,
            certificate=self.identity.certificate if msg.wants_cert else None,
            signature=sign(
                self.identity.private_key,
                challenge_sig_input(msg.nonce, challenge_nonce),
            ),
        )
        return BackendResult(
            reply=encode_handshake(reply), requester_id=msg.requester_id
        )

    def _requester_key(
        self, session: _Session, cert: Optional[Certificate]
    ) -> Optional[bytes]:
        cached = self._known_keys.get(session.requester_id)
        if cached is not None:
            return cached
        if cert is not None and cert.subject_id == session.requester_id:
            return cert.public_key
        return None

    def _match_session(self, cert: Optional[Certificate], sig_input_for, signature: bytes) -> _Session:
        """Find the open session whose nonce this signature binds."""
        if cert is not None and not cert_verify(self.authority_key, cert):
            raise BadCertificate("attached certificate failed verification")
        for session in list(self._sessions.values()):
            key = self._requester_key(session, cert)
            if key is None:
                continue
            if sig_verify(key, sig_input_for(session.challenge_nonce), signature):
                self._sessions.pop(session.challenge_nonce, None)
                if self._session_by_requester.get(session.requester_id) == session.challenge_nonce:
                    del self._session_by_requester[session.requester_id]
                if session.requester_id not in self._known_keys and cert is not None:
                    self._known_keys[session.requester_id] = cert.public_key
                return session
        raise BadSignature("signature matches no open session")

    def _next_grant_counter(self, provider_id: int) -> int:
        if provider_id not in self._provider_keys:
            raise UnknownProvider(f"provider {provider_id} is not registered")
        counter = self._next_counter[provider_id]
        if counter > COUNTER_MAX:
            raise CounterExhausted(f"counter space for provider {provider_id} spent")
        self._next_counter[provider_id] = counter + 1
        return counter

    def _handle_service_request(self, msg: ServiceRequest, now_s: float) -> BackendResult:
        session = self._match_session(
            msg.certificate,
            lambda nonce: service_sig_input(msg.service_id, msg.provider_id, nonce),
            msg.signature,
        )
        decision = self.limiter.check_and_update(
            session.requester_id, msg.service_id, now_s
        )
        if decision is Decision.DROPPED:
            refusal = encode_handshake(RequestThrottled(msg.service_id))
            return BackendResult(
                reply=refusal,
                requester_id=session.requester_id,
                service_id=msg.service_id,
                throttled=True,
            )
        counter = self._next_grant_counter(msg.provider_id)
        key = self._provider_keys[msg.provider_id]
        mac = mac_tag(key, proxy_mac_input(msg.service_id, msg.provider_id, counter))
        if self.issued is not None:
            self.issued.append(
                IssuedRecord(
                    Protocol.PROXY,
                    msg.provider_id,
                    msg.service_id,
                    counter,
                    session.requester_id,
                )
            )
        payload = encode_provider_request(ProxyRequest(msg.service_id, mac))
        return BackendResult(
            forward=(msg.provider_id, payload),
            requester_id=session.requester_id,
            service_id=msg.service_id,
            served=True,
        )

    def _handle_ticket_request(self, msg: TicketRequest, now_s: float) -> BackendResult:
        session = self._match_session(
            msg.certificate,
            lambda nonce: ticket_request_sig_input(
                msg.provider_id,
                msg.service_id,
                nonce,
                msg.reply_nonce,
                msg.commitment_digest,
            ),
            msg.signature,
        )
        decision = self.limiter.check_and_update(
            session.requester_id, msg.service_id, now_s
        )
        if decision is Decision.DROPPED:
            refusal = encode_handshake(RequestThrottled(msg.service_id))
            return BackendResult(
                reply=refusal,
                requester_id=session.requester_id,
                service_id=msg.service_id,
                throttled=True,
            )
        counter = self._next_grant_counter(msg.provider_id)
        key = self._provider_keys[msg.provider_id]
        ticket = Ticket(
            msg.service_id,
            counter,
            mac_tag(
                key,
                ticket_mac_input(
                    msg.provider_id, msg.service_id, msg.commitment_digest, counter
                ),
            ),
        )
        grant = TicketGrant(
            ticket,
            sign(self.identity.private_key, grant_sig_input(ticket, msg.reply_nonce)),
        )
        if self.issued is not None:
            self.issued.append(
                IssuedRecord(
                    Protocol.TICKET,
                    msg.provider_id,
                    msg.service_id,
                    counter,
                    session.requester_id,
                )
            )
        return BackendResult(
            reply=encode_handshake(grant),
            requester_id=session.requester_id,
            service_id=msg.service_id,
            served=True,
        )


# ---------------------------------------------------------------------------
# requester
# ---------------------------------------------------------------------------

@dataclass
class _Pending:
    service_id: int
    provider_id: int
    hello_nonce: bytes
    reply_nonce: Optional[bytes] = None
    commitment: Optional[TicketCommitment] = None
    request_sent: bool = False


@dataclass(frozen=True)
class RequesterStep:
    """Transmissions and verdicts produced by one inbound backend message."""

    to_backend: Optional[bytes] = None
    to_provider: Optional[Tuple[int, bytes]] = None
    granted: bool = False
    throttled: bool = False


class RequesterActor:
    """Client side of both protocols; at most one request in flight."""

    def __init__(
        self,
        identity: Identity,
        authority_key: bytes,
        protocol: Protocol,
        rng: Random,
        backend_public_key: Optional[bytes] = None,
    ):
        self.identity = identity
        self.authority_key = authority_key
        self.protocol = protocol
        self._rng = rng
        self._backend_key = backend_public_key
        self._pending: Optional[_Pending] = None

    @property
    def in_flight(self) -> bool:
        return self._pending is not None

    def begin(self, service_id: int, provider_id: int) -> bytes:
        """Open a session for one request; replaces any unfinished one."""
        hello_nonce = new_nonce(self._rng)
        self._pending = _Pending(service_id, provider_id, hello_nonce)
        hello = RequesterHello(
            requester_id=self.identity.subject_id,
            nonce=hello_nonce,
            wants_cert=self._backend_key is None,
        )
        return encode_handshake(hello)

    def handle_backend(self, data: bytes) -> RequesterStep:
        msg = decode_handshake(data)
        if self._pending is None:
            raise UnknownSession(f"{type(msg).__name__} with nothing in flight")
        if isinstance(msg, BackendChallenge):
            return self._handle_challenge(msg)
        if isinstance(msg, TicketGrant):
            return self._handle_grant(msg)
        if isinstance(msg, RequestThrottled):
            self._pending = None
            return RequesterStep(throttled=True)
        raise UnexpectedMessage(f"{type(msg).__name__} sent to requester")

    def _handle_challenge(self, msg: BackendChallenge) -> RequesterStep:
        pending = self._pending
        if pending.request_sent:
            raise UnknownSession("challenge after request already sent")
        if self._backend_key is None:
            if msg.certificate is None:
                raise BadCertificate("no backend key and no certificate attached")
            if not cert_verify(self.authority_key, msg.certificate):
                raise BadCertificate("backend certificate failed verification")
            self._backend_key = msg.certificate.public_key
        if not sig_verify(
            self._backend_key,
            challenge_sig_input(pending.hello_nonce, msg.nonce),
            msg.signature,
        ):
            raise NonceMismatch("challenge does not sign our hello nonce")
        cert = self.identity.certificate if msg.wants_cert else None
        if self.protocol is Protocol.PROXY:
            request = ServiceRequest(
                service_id=pending.service_id,
                provider_id=pending.provider_id,
                certificate=cert,
                signature=sign(
                    self.identity.private_key,
                    service_sig_input(
                        pending.service_id, pending.provider_id, msg.nonce
                    ),
                ),
            )
            pending.request_sent = True
            return RequesterStep(to_backend=encode_handshake(request))
        pending.reply_nonce = new_nonce(self._rng)
        pending.commitment = TicketCommitment.generate(self._rng)
        request = TicketRequest(
            provider_id=pending.provider_id,
            service_id=pending.service_id,
            reply_nonce=pending.reply_nonce,
            commitment_digest=pending.commitment.digest,
            certificate=cert,
            signature=sign(
                self.identity.private_key,
                ticket_request_sig_input(
                    pending.provider_id,
                    pending.service_id,
                    msg.nonce,
                    pending.reply_nonce,
                    pending.commitment.digest,
                ),
            ),
        )
        pending.request_sent = True
        return RequesterStep(to_backend=encode_handshake(request))

    def _handle_grant(self, msg: TicketGrant) -> RequesterStep:
        pending = self._pending
        if self.protocol is not Protocol.TICKET or pending.reply_nonce is None:
            raise UnexpectedMessage("ticket grant outside a ticket exchange")
        if not sig_verify(
            self._backend_key,
            grant_sig_input(msg.ticket, pending.reply_nonce),
            msg.signature,
        ):
            raise NonceMismatch("grant does not sign our reply nonce")
        if msg.ticket.service_id != pending.service_id:
            raise NonceMismatch("grant names a different service")
        redeem = TicketRedeem(pending.commitment.secret, msg.ticket)
        provider_id = pending.provider_id
        self._pending = None
        return RequesterStep(
            to_provider=(provider_id, encode_provider_request(redeem)),
            granted=True,
        )


# ---------------------------------------------------------------------------
# provider
# ---------------------------------------------------------------------------

class ProviderCore:
    """Constrained endpoint: verifies cheaply, serves, and meters energy.

    Every well-formed request costs ``verify_energy_j`` whether or not it
    verifies; that is the drain an attacker can always force.  A served
    request additionally costs its service energy.  Wrong-size datagrams
    are discarded before any cryptography runs.
    """

    def __init__(
        self,
        provider_id: int,
        backend_key: bytes,
        services: Mapping[int, float],
        verify_energy_j: float,
        ledger: EnergyLedger,
        protocol: Protocol,
        validity_distance: int = 16,
    ):
        self.provider_id = provider_id
        self._backend_key = backend_key
        self._services = dict(services)
        self.verify_energy_j = verify_energy_j
        self.ledger = ledger
        self.protocol = protocol
        self.validity_distance = validity_distance
        self._last_counter = -1
        self._replay = ReplayCache(validity_distance)

    @property
    def last_counter(self) -> int:
        return self._last_counter

    def handle_request(self, data: bytes):
        if self.protocol is Protocol.PROXY:
            return self._handle_proxy(data)
        if self.protocol is Protocol.ASYMMETRIC:
            return self._handle_direct(data)
        return self._handle_redeem(data)

    def _serve(self, service_id: int):
        if service_id not in self._services:
            return Reject(RejectReason.UNKNOWN_SERVICE)
        self.ledger.drain(self._services[service_id])
        return Serve(service_id)

    def _handle_proxy(self, data: bytes):
        try:
            msg = decode_proxy_request(data)
        except WrongLength:
            return Reject(RejectReason.MALFORMED)
        self.ledger.drain(self.verify_energy_j)
        # Expected counter first, then a bounded forward window so one lost
        # grant does not wedge the counter forever.
        for counter in range(
            self._last_counter + 1,
            self._last_counter + 2 + self.validity_distance,
        ):
            if counter > COUNTER_MAX:
                break
            if mac_verify(
                self._backend_key,
                proxy_mac_input(msg.service_id, self.provider_id, counter),
                msg.mac,
            ):
                self._last_counter = counter
                return self._serve(msg.service_id)
        # No match ahead; a match behind means a replayed or duplicated
        # grant rather than a forgery.
        for counter in range(
            self._last_counter, max(self._last_counter - self.validity_distance, 0) - 1, -1
        ):
            if mac_verify(
                self._backend_key,
                proxy_mac_input(msg.service_id, self.provider_id, counter),
                msg.mac,
            ):
                return Reject(RejectReason.STALE_COUNTER)
        return Reject(RejectReason.BAD_MAC)

    def _handle_direct(self, data: bytes):
        # Baseline without the backend: every well-formed request forces a
        # public-key verification, and nothing rate-limits the caller.
        try:
            service_id = decode_asym_request(data)
        except WrongLength:
            return Reject(RejectReason.MALFORMED)
        self.ledger.drain(self.verify_energy_j)
        # Honest encoders zero-pad, so any other body plays the part of a
        # request whose signature fails to verify.
        if data != encode_asym_request(service_id):
            return Reject(RejectReason.BAD_MAC)
        return self._serve(service_id)

    def _handle_redeem(self, data: bytes):
        try:
            msg = decode_ticket_redeem(data)
        except WrongLength:
            return Reject(RejectReason.MALFORMED)
        self.ledger.drain(self.verify_energy_j)
        digest = dm_hash(msg.reveal)
        ticket = msg.ticket
        if not mac_verify(
            self._backend_key,
            ticket_mac_input(self.provider_id, ticket.service_id, digest, ticket.counter),
            ticket.mac,
        ):
            return Reject(RejectReason.BAD_MAC)
        verdict = self._replay.admit(ticket.counter)
        if verdict is CacheDecision.DUPLICATE:
            return Reject(RejectReason.REPLAYED)
        if verdict is CacheDecision.TOO_OLD:
            return Reject(RejectReason.OUTSIDE_WINDOW)
        return self._serve(ticket.service_id)


# ---------------------------------------------------------------------------
# whole-deployment key setup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Deployment:
    """Everything sharing one trust root, wired up and ready to exchange."""

    authority: CertificateAuthority
    backend: BackendCore
    requesters: Dict[int, RequesterActor]
    providers: Dict[int, ProviderCore]
    provider_keys: Dict[int, bytes]


BACKEND_SUBJECT_ID = 0xB0000001


def build_deployment(
    limiter: LimiterTable,
    services: Mapping[int, float],
    protocol: Protocol,
    requester_ids,
    provider_ids,
    verify_energy_j: float,
    provider_budget_j: float,
    seed: int,
    preshare_keys: bool = False,
    record_issued: bool = False,
    validity_distance: int = 16,
) -> Deployment:
    """Wire a full deployment under one authority with per-actor RNG streams.

    Every RNG is derived from ``seed`` plus the actor's name, so adding an
    actor never shifts anyone else's randomness.  With ``preshare_keys``
    the certificate exchange is skipped: requesters are born knowing the
    backend's key and vice versa.
    """
    authority = CertificateAuthority.generate(Random(f"{seed}:authority"))
    backend_identity = new_identity(
        authority, BACKEND_SUBJECT_ID, Random(f"{seed}:backend")
    )
    backend = BackendCore(
        backend_identity,
        authority.public_key,
        limiter,
        Random(f"{seed}:backend:nonces"),
        record_issued=record_issued,
    )
    requesters = {}
    if protocol is not Protocol.ASYMMETRIC:
        for requester_id in requester_ids:
            identity = new_identity(
                authority, requester_id, Random(f"{seed}:requester:{requester_id}")
            )
            requesters[requester_id] = RequesterActor(
                identity,
                authority.public_key,
                protocol,
                Random(f"{seed}:requester:{requester_id}:nonces"),
                backend_public_key=backend_identity.public_key if preshare_keys else None,
            )
            if preshare_keys:
                backend.know_requester(requester_id, identity.public_key)
    providers = {}
    provider_keys = {}
    for provider_id in provider_ids:
        key = Random(f"{seed}:provider:{provider_id}:key").randbytes(16)
        provider_keys[provider_id] = key
        backend.register_provider(provider_id, key)
        providers[provider_id] = ProviderCore(
            provider_id,
            key,
            services,
            verify_energy_j,
            EnergyLedger(provider_budget_j),
            protocol,
            validity_distance=validity_distance,
        )
    return Deployment(authority, backend, requesters, providers, provider_keys)
