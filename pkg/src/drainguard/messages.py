"""Wire formats for the authentication protocols.

Two very different links, two very different encodings:

* Backend-facing messages travel between unconstrained parties.  They use a
  self-describing layout: one tag byte, then each field as a 2-byte
  big-endian length prefix plus payload.  Optional certificates ride as an
  empty field when omitted.
* Provider-facing messages cross the constrained radio, where every byte is
  listen time.  They are fixed-width with nothing optional:

      proxy request   = service_id(1) | mac(8)                  =  9 bytes
      ticket redeem   = reveal(4) | service_id(1) | counter(2)
                        | mac(8)                                = 15 bytes

  The proxy request carries no counter; the provider tracks it implicitly.

MAC inputs carry a 1-byte length prefix; the two MAC contexts have distinct
payload widths (7 vs 23 bytes), so a tag computed for one can never verify
in the other.  Signature contexts are likewise separated by total width
alone: challenge 32, service request 21, ticket request 53, ticket grant
27, certificate 36.  Every field is fixed width, so equal-length collisions
across contexts cannot arise.
"""

from dataclasses import dataclass
from typing import Optional, Union

from .crypto import (
    CERTIFICATE_BYTES,
    DIGEST_BYTES,
    MAC_BYTES,
    NONCE_BYTES,
    SIGNATURE_BYTES,
    Certificate,
)

SERVICE_ID_BYTES = 1
PROVIDER_ID_BYTES = 4
REQUESTER_ID_BYTES = 4
COUNTER_BYTES = 2
COUNTER_MAX = (1 << (8 * COUNTER_BYTES)) - 1
REVEAL_BYTES = 4

TICKET_BYTES = SERVICE_ID_BYTES + COUNTER_BYTES + MAC_BYTES
PROXY_REQUEST_BYTES = SERVICE_ID_BYTES + MAC_BYTES
TICKET_REDEEM_BYTES = REVEAL_BYTES + TICKET_BYTES

# Size of a request under the do-it-yourself alternative, where the
# requester authenticates to the provider directly with certificates and
# signatures instead of going through the backend.  Only its size and the
# service byte matter to the model; the body is treated as opaque.
ASYM_REQUEST_BYTES = 532

_TAG_HELLO = 0x01
_TAG_CHALLENGE = 0x02
_TAG_SERVICE_REQUEST = 0x03
_TAG_TICKET_REQUEST = 0x04
_TAG_TICKET_GRANT = 0x05
_TAG_THROTTLED = 0x06


class MalformedMessage(ValueError):
    """Bytes do not parse as the expected message."""


class WrongLength(MalformedMessage):
    """Fixed-width message arrived with the wrong number of bytes."""


def _check_range(name: str, value: int, width: int) -> None:
    if not 0 <= value < 1 << (8 * width):
        raise ValueError(f"{name} {value} does not fit {width} bytes")


def _check_width(name: str, value: bytes, width: int) -> None:
    if len(value) != width:
        raise ValueError(f"{name} must be {width} bytes, got {len(value)}")


# ---------------------------------------------------------------------------
# message types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequesterHello:
    """Opens a session: requester's id, fresh nonce, and whether it still
    needs the backend's certificate."""

    requester_id: int
    nonce: bytes
    wants_cert: bool


@dataclass(frozen=True)
class BackendChallenge:
    """Backend's reply: its own nonce, signed together with the hello nonce.

    ``wants_cert`` asks the requester to attach its certificate to the next
    message; the backend skips it for requesters it has already verified.
    """

    nonce: bytes
    wants_cert: bool
    certificate: Optional[Certificate]
    signature: bytes


@dataclass(frozen=True)
class ServiceRequest:
    """Proxy-protocol ask: have the backend forward one request."""

    service_id: int
    provider_id: int
    certificate: Optional[Certificate]
    signature: bytes


@dataclass(frozen=True)
class TicketRequest:
    """Ticket-protocol ask: a grant the requester will redeem itself.

    ``reply_nonce`` binds the grant to this request; ``commitment_digest``
    binds the ticket to a secret only this requester can reveal.
    """

    provider_id: int
    service_id: int
    reply_nonce: bytes
    commitment_digest: bytes
    certificate: Optional[Certificate]
    signature: bytes


@dataclass(frozen=True)
class Ticket:
    """Backend-issued, provider-verifiable voucher for one request."""

    service_id: int
    counter: int
    mac: bytes

    def to_bytes(self) -> bytes:
        _check_range("service id", self.service_id, SERVICE_ID_BYTES)
        _check_range("counter", self.counter, COUNTER_BYTES)
        _check_width("mac", self.mac, MAC_BYTES)
        return (
            self.service_id.to_bytes(SERVICE_ID_BYTES, "big")
            + self.counter.to_bytes(COUNTER_BYTES, "big")
            + self.mac
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ticket":
        if len(data) != TICKET_BYTES:
            raise WrongLength(f"ticket must be {TICKET_BYTES} bytes, got {len(data)}")
        return cls(
            data[0],
            int.from_bytes(data[1 : 1 + COUNTER_BYTES], "big"),
            data[1 + COUNTER_BYTES :],
        )


@dataclass(frozen=True)
class TicketGrant:
    ticket: Ticket
    signature: bytes


@dataclass(frozen=True)
class RequestThrottled:
    """Backend refusal: the requester's rate budget is spent."""

    service_id: int


@dataclass(frozen=True)
class ProxyRequest:
    """What a proxy-protocol provider actually receives."""

    service_id: int
    mac: bytes


@dataclass(frozen=True)
class TicketRedeem:
    """What a ticket-protocol provider actually receives."""

    reveal: bytes
    ticket: Ticket


HandshakeMessage = Union[
    RequesterHello,
    BackendChallenge,
    ServiceRequest,
    TicketRequest,
    TicketGrant,
    RequestThrottled,
]
ProviderMessage = Union[ProxyRequest, TicketRedeem]


# ---------------------------------------------------------------------------
# MAC and signature input builders
# ---------------------------------------------------------------------------

def _with_length(payload: bytes) -> bytes:
    return len(payload).to_bytes(1, "big") + payload


def proxy_mac_input(service_id: int, provider_id: int, counter: int) -> bytes:
    _check_range("service id", service_id, SERVICE_ID_BYTES)
    _check_range("provider id", provider_id, PROVIDER_ID_BYTES)
    _check_range("counter", counter, COUNTER_BYTES)
    return _with_length(
        service_id.to_bytes(SERVICE_ID_BYTES, "big")
        + provider_id.to_bytes(PROVIDER_ID_BYTES, "big")
        + counter.to_bytes(COUNTER_BYTES, "big")
    )


def ticket_mac_input(
    provider_id: int, service_id: int, commitment_digest: bytes, counter: int
) -> bytes:
    _check_range("provider id", provider_id, PROVIDER_ID_BYTES)
    _check_range("service id", service_id, SERVICE_ID_BYTES)
    _check_width("commitment digest", commitment_digest, DIGEST_BYTES)
    _check_range("counter", counter, COUNTER_BYTES)
    return _with_length(
        provider_id.to_bytes(PROVIDER_ID_BYTES, "big")
        + service_id.to_bytes(SERVICE_ID_BYTES, "big")
        + commitment_digest
        + counter.to_bytes(COUNTER_BYTES, "big")
    )


def challenge_sig_input(hello_nonce: bytes, challenge_nonce: bytes) -> bytes:
    _check_width("hello nonce", hello_nonce, NONCE_BYTES)
    _check_width("challenge nonce", challenge_nonce, NONCE_BYTES)
    return hello_nonce + challenge_nonce


def service_sig_input(service_id: int, provider_id: int, challenge_nonce: bytes) -> bytes:
    _check_range("service id", service_id, SERVICE_ID_BYTES)
    _check_range("provider id", provider_id, PROVIDER_ID_BYTES)
    _check_width("challenge nonce", challenge_nonce, NONCE_BYTES)
    return (
        service_id.to_bytes(SERVICE_ID_BYTES, "big")
        + provider_id.to_bytes(PROVIDER_ID_BYTES, "big")
        + challenge_nonce
    )


def ticket_request_sig_input(
    provider_id: int,
    service_id: int,
    challenge_nonce: bytes,
    reply_nonce: bytes,
    commitment_digest: bytes,
) -> bytes:
    _check_range("provider id", provider_id, PROVIDER_ID_BYTES)
    _check_range("service id", service_id, SERVICE_ID_BYTES)
    _check_width("challenge nonce", challenge_nonce, NONCE_BYTES)
    _check_width("reply nonce", reply_nonce, NONCE_BYTES)
    _check_width("commitment digest", commitment_digest, DIGEST_BYTES)
    return (
        provider_id.to_bytes(PROVIDER_ID_BYTES, "big")
        + service_id.to_bytes(SERVICE_ID_BYTES, "big")
        + challenge_nonce
        + reply_nonce
        + commitment_digest
    )


def grant_sig_input(ticket: Ticket, reply_nonce: bytes) -> bytes:
    _check_width("reply nonce", reply_nonce, NONCE_BYTES)
    return ticket.to_bytes() + reply_nonce


# ---------------------------------------------------------------------------
# provider wire: fixed-width
# ---------------------------------------------------------------------------

def encode_provider_request(msg: ProviderMessage) -> bytes:
    if isinstance(msg, ProxyRequest):
        _check_range("service id", msg.service_id, SERVICE_ID_BYTES)
        _check_width("mac", msg.mac, MAC_BYTES)
        return msg.service_id.to_bytes(SERVICE_ID_BYTES, "big") + msg.mac
    if isinstance(msg, TicketRedeem):
        _check_width("reveal", msg.reveal, REVEAL_BYTES)
        return msg.reveal + msg.ticket.to_bytes()
    raise TypeError(f"not a provider message: {type(msg).__name__}")


def decode_proxy_request(data: bytes) -> ProxyRequest:
    if len(data) != PROXY_REQUEST_BYTES:
        raise WrongLength(
            f"proxy request must be {PROXY_REQUEST_BYTES} bytes, got {len(data)}"
        )
    return ProxyRequest(data[0], data[SERVICE_ID_BYTES:])


def decode_ticket_redeem(data: bytes) -> TicketRedeem:
    if len(data) != TICKET_REDEEM_BYTES:
        raise WrongLength(
            f"ticket redeem must be {TICKET_REDEEM_BYTES} bytes, got {len(data)}"
        )
    return TicketRedeem(data[:REVEAL_BYTES], Ticket.from_bytes(data[REVEAL_BYTES:]))


def encode_asym_request(service_id: int) -> bytes:
    """Stand-in for a direct certificate-bearing request."""
    _check_range("service id", service_id, SERVICE_ID_BYTES)
    return service_id.to_bytes(SERVICE_ID_BYTES, "big").ljust(ASYM_REQUEST_BYTES, b"\x00")


def decode_asym_request(data: bytes) -> int:
    if len(data) != ASYM_REQUEST_BYTES:
        raise WrongLength(
            f"direct request must be {ASYM_REQUEST_BYTES} bytes, got {len(data)}"
        )
    return data[0]


# ---------------------------------------------------------------------------
# backend wire: tagged, length-prefixed fields
# ---------------------------------------------------------------------------

def _field(payload: bytes) -> bytes:
    return len(payload).to_bytes(2, "big") + payload


def _cert_field(cert: Optional[Certificate]) -> bytes:
    return _field(cert.to_bytes() if cert is not None else b"")


def _split_fields(data: bytes) -> list:
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 2 > len(data):
            raise MalformedMessage("truncated field length")
        length = int.from_bytes(data[pos : pos + 2], "big")
        pos += 2
        if pos + length > len(data):
            raise MalformedMessage("field runs past end of message")
        fields.append(data[pos : pos + length])
        pos += length
    return fields


def _expect(fields: list, widths: list) -> None:
    # None in widths means "empty or one certificate".
    if len(fields) != len(widths):
        raise MalformedMessage(f"expected {len(widths)} fields, got {len(fields)}")
    for index, (field, width) in enumerate(zip(fields, widths)):
        if width is None:
            if len(field) not in (0, CERTIFICATE_BYTES):
                raise MalformedMessage(f"field {index} is not a certificate")
        elif len(field) != width:
            raise MalformedMessage(
                f"field {index} must be {width} bytes, got {len(field)}"
            )


def _flag(value: bool) -> bytes:
    return b"\x01" if value else b"\x00"


def _parse_flag(field: bytes) -> bool:
    if field not in (b"\x00", b"\x01"):
        raise MalformedMessage("flag byte must be 0 or 1")
    return field == b"\x01"


def _parse_cert(field: bytes) -> Optional[Certificate]:
    return Certificate.from_bytes(field) if field else None


def encode_handshake(msg: HandshakeMessage) -> bytes:
    if isinstance(msg, RequesterHello):
        _check_range("requester id", msg.requester_id, REQUESTER_ID_BYTES)
        _check_width("nonce", msg.nonce, NONCE_BYTES)
        body = (
            _field(msg.requester_id.to_bytes(REQUESTER_ID_BYTES, "big"))
            + _field(msg.nonce)
            + _field(_flag(msg.wants_cert))
        )
        return bytes([_TAG_HELLO]) + body
    if isinstance(msg, BackendChallenge):
        _check_width("nonce", msg.nonce, NONCE_BYTES)
        _check_width("signature", msg.signature, SIGNATURE_BYTES)
        body = (
            _field(msg.nonce)
            + _field(_flag(msg.wants_cert))
            + _cert_field(msg.certificate)
            + _field(msg.signature)
        )
        return bytes([_TAG_CHALLENGE]) + body
    if isinstance(msg, ServiceRequest):
        _check_range("service id", msg.service_id, SERVICE_ID_BYTES)
        _check_range("provider id", msg.provider_id, PROVIDER_ID_BYTES)
        _check_width("signature", msg.signature, SIGNATURE_BYTES)
        body = (
            _field(msg.service_id.to_bytes(SERVICE_ID_BYTES, "big"))
            + _field(msg.provider_id.to_bytes(PROVIDER_ID_BYTES, "big"))
            + _cert_field(msg.certificate)
            + _field(msg.signature)
        )
        return bytes([_TAG_SERVICE_REQUEST]) + body
    if isinstance(msg, TicketRequest):
        _check_range("provider id", msg.provider_id, PROVIDER_ID_BYTES)
        _check_range("service id", msg.service_id, SERVICE_ID_BYTES)
        _check_width("reply nonce", msg.reply_nonce, NONCE_BYTES)
        _check_width("commitment digest", msg.commitment_digest, DIGEST_BYTES)
        _check_width("signature", msg.signature, SIGNATURE_BYTES)
        body = (
            _field(msg.provider_id.to_bytes(PROVIDER_ID_BYTES, "big"))
            + _field(msg.service_id.to_bytes(SERVICE_ID_BYTES, "big"))
            + _field(msg.reply_nonce)
            + _field(msg.commitment_digest)
            + _cert_field(msg.certificate)
            + _field(msg.signature)
        )
        return bytes([_TAG_TICKET_REQUEST]) + body
    if isinstance(msg, TicketGrant):
        _check_width("signature", msg.signature, SIGNATURE_BYTES)
        body = _field(msg.ticket.to_bytes()) + _field(msg.signature)
        return bytes([_TAG_TICKET_GRANT]) + body
    if isinstance(msg, RequestThrottled):
        _check_range("service id", msg.service_id, SERVICE_ID_BYTES)
        body = _field(msg.service_id.to_bytes(SERVICE_ID_BYTES, "big"))
        return bytes([_TAG_THROTTLED]) + body
    raise TypeError(f"not a handshake message: {type(msg).__name__}")


def decode_handshake(data: bytes) -> HandshakeMessage:
    if not data:
        raise MalformedMessage("empty message")
    tag, fields = data[0], _split_fields(data[1:])
    if tag == _TAG_HELLO:
        _expect(fields, [REQUESTER_ID_BYTES, NONCE_BYTES, 1])
        return RequesterHello(
            int.from_bytes(fields[0], "big"), fields[1], _parse_flag(fields[2])
        )
    if tag == _TAG_CHALLENGE:
        _expect(fields, [NONCE_BYTES, 1, None, SIGNATURE_BYTES])
        return BackendChallenge(
            fields[0], _parse_flag(fields[1]), _parse_cert(fields[2]), fields[3]
        )
    if tag == _TAG_SERVICE_REQUEST:
        _expect(fields, [SERVICE_ID_BYTES, PROVIDER_ID_BYTES, None, SIGNATURE_BYTES])
        return ServiceRequest(
            fields[0][0],
            int.from_bytes(fields[1], "big"),
            _parse_cert(fields[2]),
            fields[3],
        )
    if tag == _TAG_TICKET_REQUEST:
        _expect(
            fields,
            [
                PROVIDER_ID_BYTES,
                SERVICE_ID_BYTES,
                NONCE_BYTES,
                DIGEST_BYTES,
                None,
                SIGNATURE_BYTES,
            ],
        )
        return TicketRequest(
            int.from_bytes(fields[0], "big"),
            fields[1][0],
            fields[2],
            fields[3],
            _parse_cert(fields[4]),
            fields[5],
        )
    if tag == _TAG_TICKET_GRANT:
        _expect(fields, [TICKET_BYTES, SIGNATURE_BYTES])
        return TicketGrant(Ticket.from_bytes(fields[0]), fields[1])
    if tag == _TAG_THROTTLED:
        _expect(fields, [SERVICE_ID_BYTES])
        return RequestThrottled(fields[0][0])
    raise MalformedMessage(f"unknown message tag 0x{tag:02x}")
