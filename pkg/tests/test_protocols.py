"""End-to-end exchanges between the three protocol engines, plus the
replay window checked against a declarative oracle."""

from dataclasses import replace
from random import Random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from drainguard.crypto import TicketCommitment, mac_tag, sign
from drainguard.limiter import Algorithm, LimiterParams, LimiterTable
from drainguard.messages import (
    ProxyRequest,
    ServiceRequest,
    Ticket,
    TicketRedeem,
    decode_handshake,
    encode_handshake,
    encode_provider_request,
    proxy_mac_input,
    service_sig_input,
    ticket_mac_input,
)
from drainguard.protocols import (
    BadCertificate,
    BadSignature,
    CacheDecision,
    CounterExhausted,
    NonceMismatch,
    Protocol,
    Reject,
    RejectReason,
    ReplayCache,
    Serve,
    UnexpectedMessage,
    UnknownProvider,
    UnknownSession,
    build_deployment,
)

from conftest import REQUEST_ENERGY_J, SERVICE_ID

VERIFY_J = 1.21e-6
PROVIDER_ID = 0x50000001
BUDGET_J = 451.008


def open_limiter() -> LimiterTable:
    # Never drops; for tests that exercise authentication, not throttling.
    params = LimiterParams(
        tick_seconds=60.0,
        leak_per_tick=0.0,
        lb_threshold=1e9,
        decay=0.5,
        ewma_init=0.0,
        ewma_threshold=1e9,
    )
    return LimiterTable(params, Algorithm.LEAKY_BUCKET, {SERVICE_ID: REQUEST_ENERGY_J})


def strict_limiter() -> LimiterTable:
    # Drops everything after the first request.
    params = LimiterParams(
        tick_seconds=60.0,
        leak_per_tick=0.0,
        lb_threshold=REQUEST_ENERGY_J / 2,
        decay=0.5,
        ewma_init=0.0,
        ewma_threshold=REQUEST_ENERGY_J / 2,
    )
    return LimiterTable(params, Algorithm.LEAKY_BUCKET, {SERVICE_ID: REQUEST_ENERGY_J})


def deployment(protocol, limiter=None, requesters=(1,), preshare=True, record=False, seed=1234):
    return build_deployment(
        limiter if limiter is not None else open_limiter(),
        {SERVICE_ID: REQUEST_ENERGY_J},
        protocol,
        list(requesters),
        [PROVIDER_ID],
        VERIFY_J,
        BUDGET_J,
        seed=seed,
        preshare_keys=preshare,
        record_issued=record,
    )


def handshake(dep, requester_id=1, service_id=SERVICE_ID, now_s=0.0):
    """Run the backend half of one request.  Returns the payload headed for
    the provider, or None if the backend throttled it."""
    requester = dep.requesters[requester_id]
    result = dep.backend.handle_datagram(
        requester.begin(service_id, PROVIDER_ID), now_s
    )
    step = requester.handle_backend(result.reply)
    result = dep.backend.handle_datagram(step.to_backend, now_s)
    if result.throttled:
        assert requester.handle_backend(result.reply).throttled
        return None
    if result.forward is not None:
        provider_id, payload = result.forward
    else:
        step = requester.handle_backend(result.reply)
        assert step.granted
        provider_id, payload = step.to_provider
    assert provider_id == PROVIDER_ID
    return payload


def run_exchange(dep, **kwargs):
    payload = handshake(dep, **kwargs)
    if payload is None:
        return None
    return dep.providers[PROVIDER_ID].handle_request(payload)


def craft_proxy(key, service_id, counter):
    mac = mac_tag(key, proxy_mac_input(service_id, PROVIDER_ID, counter))
    return encode_provider_request(ProxyRequest(service_id, mac))


def craft_redeem(key, service_id, counter, rng):
    commitment = TicketCommitment.generate(rng)
    mac = mac_tag(
        key, ticket_mac_input(PROVIDER_ID, service_id, commitment.digest, counter)
    )
    redeem = TicketRedeem(commitment.secret, Ticket(service_id, counter, mac))
    return encode_provider_request(redeem)


class TestReplayCache:
    def test_fresh_counters_accepted(self):
        cache = ReplayCache(16)
        assert all(cache.admit(c) is CacheDecision.ACCEPT for c in range(5))

    def test_duplicate_rejected(self):
        cache = ReplayCache(16)
        cache.admit(3)
        assert cache.admit(3) is CacheDecision.DUPLICATE

    def test_old_counter_rejected(self):
        cache = ReplayCache(16)
        cache.admit(100)
        assert cache.admit(83) is CacheDecision.TOO_OLD

    def test_window_edge_is_inclusive(self):
        cache = ReplayCache(16)
        cache.admit(100)
        assert cache.admit(84) is CacheDecision.ACCEPT

    def test_out_of_order_within_window(self):
        cache = ReplayCache(16)
        assert cache.admit(0) is CacheDecision.ACCEPT
        assert cache.admit(20) is CacheDecision.ACCEPT
        assert cache.admit(5) is CacheDecision.ACCEPT
        assert cache.admit(2) is CacheDecision.TOO_OLD

    def test_zero_distance_still_blocks_duplicates(self):
        cache = ReplayCache(0)
        assert cache.admit(5) is CacheDecision.ACCEPT
        assert cache.admit(5) is CacheDecision.DUPLICATE
        assert cache.admit(4) is CacheDecision.TOO_OLD

    def test_memory_stays_bounded(self):
        cache = ReplayCache(16)
        for counter in range(1000):
            cache.admit(counter)
        assert len(cache) <= 17

    def test_rejects_negative_distance(self):
        with pytest.raises(ValueError):
            ReplayCache(-1)

    @given(
        st.lists(st.integers(min_value=0, max_value=30), max_size=60),
        st.integers(min_value=0, max_value=8),
    )
    def test_matches_declarative_oracle(self, counters, distance):
        # Oracle: too-old beats duplicate, mirroring the pruning the real
        # cache does; otherwise any previously accepted counter is a dupe.
        cache = ReplayCache(distance)
        accepted = set()
        top = None
        for counter in counters:
            if top is not None and top - counter > distance:
                expected = CacheDecision.TOO_OLD
            elif counter in accepted:
                expected = CacheDecision.DUPLICATE
            else:
                expected = CacheDecision.ACCEPT
            assert cache.admit(counter) is expected
            if expected is CacheDecision.ACCEPT:
                accepted.add(counter)
                top = counter if top is None else max(top, counter)


class TestProxyProtocol:
    def test_honest_exchange_serves(self):
        dep = deployment(Protocol.PROXY)
        assert run_exchange(dep) == Serve(SERVICE_ID)
        ledger = dep.providers[PROVIDER_ID].ledger
        assert ledger.drained_j == pytest.approx(VERIFY_J + REQUEST_ENERGY_J, rel=1e-12)

    def test_counters_issued_in_order(self):
        dep = deployment(Protocol.PROXY, record=True)
        for _ in range(3):
            assert run_exchange(dep) == Serve(SERVICE_ID)
        assert [record.counter for record in dep.backend.issued] == [0, 1, 2]
        assert all(record.requester_id == 1 for record in dep.backend.issued)

    def test_replayed_request_rejected_without_service_drain(self):
        dep = deployment(Protocol.PROXY)
        payload = handshake(dep)
        provider = dep.providers[PROVIDER_ID]
        assert provider.handle_request(payload) == Serve(SERVICE_ID)
        before = provider.ledger.drained_j
        assert provider.handle_request(payload) == Reject(RejectReason.STALE_COUNTER)
        assert provider.ledger.drained_j == pytest.approx(before + VERIFY_J, rel=1e-12)

    def test_lost_grant_does_not_wedge_counter(self):
        dep = deployment(Protocol.PROXY)
        provider = dep.providers[PROVIDER_ID]
        key = dep.provider_keys[PROVIDER_ID]
        assert provider.handle_request(craft_proxy(key, SERVICE_ID, 0)) == Serve(SERVICE_ID)
        # Grant 1 never arrives; 2 is still within the forward window.
        assert provider.handle_request(craft_proxy(key, SERVICE_ID, 2)) == Serve(SERVICE_ID)
        assert provider.last_counter == 2
        assert provider.handle_request(craft_proxy(key, SERVICE_ID, 1)) == Reject(
            RejectReason.STALE_COUNTER
        )

    def test_forward_window_boundary(self):
        dep = deployment(Protocol.PROXY)
        provider = dep.providers[PROVIDER_ID]
        key = dep.provider_keys[PROVIDER_ID]
        # From a fresh provider the window covers counters 0..16.
        assert provider.handle_request(craft_proxy(key, SERVICE_ID, 17)) == Reject(
            RejectReason.BAD_MAC
        )
        assert provider.handle_request(craft_proxy(key, SERVICE_ID, 16)) == Serve(
            SERVICE_ID
        )

    def test_forged_mac_rejected(self):
        dep = deployment(Protocol.PROXY)
        provider = dep.providers[PROVIDER_ID]
        outcome = provider.handle_request(
            encode_provider_request(ProxyRequest(SERVICE_ID, b"\x00" * 8))
        )
        assert outcome == Reject(RejectReason.BAD_MAC)
        assert provider.ledger.drained_j == pytest.approx(VERIFY_J, rel=1e-12)

    def test_wrong_size_discarded_before_crypto(self):
        dep = deployment(Protocol.PROXY)
        provider = dep.providers[PROVIDER_ID]
        assert provider.handle_request(b"\x01" * 15) == Reject(RejectReason.MALFORMED)
        assert provider.ledger.drained_j == 0.0

    def test_unknown_service_with_valid_mac(self):
        dep = deployment(Protocol.PROXY)
        provider = dep.providers[PROVIDER_ID]
        key = dep.provider_keys[PROVIDER_ID]
        outcome = provider.handle_request(craft_proxy(key, 9, 0))
        assert outcome == Reject(RejectReason.UNKNOWN_SERVICE)

    def test_session_consumed_on_use(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        step = requester.handle_backend(result.reply)
        assert dep.backend.handle_datagram(step.to_backend, 0.0).served
        with pytest.raises(BadSignature):
            dep.backend.handle_datagram(step.to_backend, 0.0)

    def test_new_hello_replaces_open_session(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        first = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        stale_nonce = decode_handshake(first.reply).nonce
        dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        assert dep.backend.open_sessions() == 1
        # A request signed against the replaced session must not match.
        stale_request = ServiceRequest(
            SERVICE_ID,
            PROVIDER_ID,
            None,
            sign(
                requester.identity.private_key,
                service_sig_input(SERVICE_ID, PROVIDER_ID, stale_nonce),
            ),
        )
        with pytest.raises(BadSignature):
            dep.backend.handle_datagram(encode_handshake(stale_request), 0.0)

    def test_throttled_request_never_reaches_provider(self):
        dep = deployment(Protocol.PROXY, limiter=strict_limiter())
        assert run_exchange(dep, now_s=0.0) == Serve(SERVICE_ID)
        assert run_exchange(dep, now_s=1.0) is None
        provider = dep.providers[PROVIDER_ID]
        assert provider.ledger.drained_j == pytest.approx(
            VERIFY_J + REQUEST_ENERGY_J, rel=1e-12
        )

    def test_tampered_challenge_rejected_by_requester(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        challenge = decode_handshake(result.reply)
        bad_signature = bytes([challenge.signature[0] ^ 1]) + challenge.signature[1:]
        tampered = encode_handshake(replace(challenge, signature=bad_signature))
        with pytest.raises(NonceMismatch):
            requester.handle_backend(tampered)

    def test_counter_space_exhaustion(self):
        dep = deployment(Protocol.PROXY)
        dep.backend._next_counter[PROVIDER_ID] = 65536  # force the rollover
        with pytest.raises(CounterExhausted):
            run_exchange(dep)

    def test_unknown_provider(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, 999), 0.0)
        step = requester.handle_backend(result.reply)
        with pytest.raises(UnknownProvider):
            dep.backend.handle_datagram(step.to_backend, 0.0)

    def test_wrong_direction_messages_rejected(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        with pytest.raises(UnexpectedMessage):
            dep.backend.handle_datagram(result.reply, 0.0)

    def test_response_with_nothing_in_flight(self):
        dep = deployment(Protocol.PROXY)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        requester.handle_backend(result.reply)
        idle = deployment(Protocol.PROXY).requesters[1]
        with pytest.raises(UnknownSession):
            idle.handle_backend(result.reply)


class TestFirstContactCertificates:
    def test_certs_exchanged_once_then_cached(self):
        dep = deployment(Protocol.PROXY, preshare=False)
        requester = dep.requesters[1]

        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        challenge = decode_handshake(result.reply)
        assert challenge.certificate is not None
        assert challenge.wants_cert
        step = requester.handle_backend(result.reply)
        assert decode_handshake(step.to_backend).certificate is not None
        assert dep.backend.handle_datagram(step.to_backend, 0.0).served

        # Second contact: both sides now know each other.
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        challenge = decode_handshake(result.reply)
        assert challenge.certificate is None
        assert not challenge.wants_cert
        step = requester.handle_backend(result.reply)
        assert decode_handshake(step.to_backend).certificate is None
        assert dep.backend.handle_datagram(step.to_backend, 0.0).served

    def test_missing_backend_certificate(self):
        dep = deployment(Protocol.PROXY, preshare=False)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        challenge = decode_handshake(result.reply)
        stripped = encode_handshake(replace(challenge, certificate=None))
        with pytest.raises(BadCertificate):
            requester.handle_backend(stripped)

    def test_backend_cert_from_wrong_authority(self):
        dep = deployment(Protocol.PROXY, preshare=False)
        impostor = deployment(Protocol.PROXY, preshare=False, seed=999)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        challenge = decode_handshake(result.reply)
        forged = encode_handshake(
            replace(challenge, certificate=impostor.backend.identity.certificate)
        )
        with pytest.raises(BadCertificate):
            requester.handle_backend(forged)

    def test_request_without_requested_cert_fails(self):
        dep = deployment(Protocol.PROXY, preshare=False)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        step = requester.handle_backend(result.reply)
        request = decode_handshake(step.to_backend)
        stripped = encode_handshake(replace(request, certificate=None))
        with pytest.raises(BadSignature):
            dep.backend.handle_datagram(stripped, 0.0)


class TestTicketProtocol:
    def test_honest_exchange_serves(self):
        dep = deployment(Protocol.TICKET)
        assert run_exchange(dep) == Serve(SERVICE_ID)
        ledger = dep.providers[PROVIDER_ID].ledger
        assert ledger.drained_j == pytest.approx(VERIFY_J + REQUEST_ENERGY_J, rel=1e-12)

    def test_redeem_replay_rejected(self):
        dep = deployment(Protocol.TICKET)
        payload = handshake(dep)
        provider = dep.providers[PROVIDER_ID]
        assert provider.handle_request(payload) == Serve(SERVICE_ID)
        assert provider.handle_request(payload) == Reject(RejectReason.REPLAYED)

    def test_wrong_reveal_rejected(self):
        dep = deployment(Protocol.TICKET)
        payload = bytearray(handshake(dep))
        payload[0] ^= 0xFF  # corrupt the revealed secret
        provider = dep.providers[PROVIDER_ID]
        assert provider.handle_request(bytes(payload)) == Reject(RejectReason.BAD_MAC)

    def test_stale_ticket_outside_window(self):
        dep = deployment(Protocol.TICKET)
        provider = dep.providers[PROVIDER_ID]
        key = dep.provider_keys[PROVIDER_ID]
        rng = Random(5)
        early = craft_redeem(key, SERVICE_ID, 0, rng)
        for counter in range(1, 19):
            assert provider.handle_request(
                craft_redeem(key, SERVICE_ID, counter, rng)
            ) == Serve(SERVICE_ID)
        assert provider.handle_request(early) == Reject(RejectReason.OUTSIDE_WINDOW)

    def test_tampered_grant_rejected_by_requester(self):
        dep = deployment(Protocol.TICKET)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        step = requester.handle_backend(result.reply)
        result = dep.backend.handle_datagram(step.to_backend, 0.0)
        grant = decode_handshake(result.reply)
        tampered_ticket = replace(grant.ticket, counter=grant.ticket.counter + 1)
        with pytest.raises(NonceMismatch):
            requester.handle_backend(
                encode_handshake(replace(grant, ticket=tampered_ticket))
            )

    def test_grant_for_wrong_service_rejected(self):
        dep = deployment(Protocol.TICKET)
        requester = dep.requesters[1]
        result = dep.backend.handle_datagram(requester.begin(SERVICE_ID, PROVIDER_ID), 0.0)
        step = requester.handle_backend(result.reply)
        result = dep.backend.handle_datagram(step.to_backend, 0.0)
        grant = decode_handshake(result.reply)
        # Re-sign a swapped ticket with the real backend key so only the
        # service check can catch it.
        from drainguard.messages import grant_sig_input

        swapped = replace(grant.ticket, service_id=SERVICE_ID + 1)
        signature = sign(
            dep.backend.identity.private_key,
            grant_sig_input(swapped, requester._pending.reply_nonce),
        )
        with pytest.raises(NonceMismatch):
            requester.handle_backend(
                encode_handshake(replace(grant, ticket=swapped, signature=signature))
            )

    def test_throttled_before_any_ticket_issued(self):
        dep = deployment(Protocol.TICKET, limiter=strict_limiter(), record=True)
        assert run_exchange(dep, now_s=0.0) == Serve(SERVICE_ID)
        assert run_exchange(dep, now_s=1.0) is None
        assert len(dep.backend.issued) == 1


class TestEnergyConservation:
    @pytest.mark.parametrize("protocol", [Protocol.PROXY, Protocol.TICKET])
    def test_drain_equals_verifies_plus_serves(self, protocol):
        dep = deployment(protocol)
        provider = dep.providers[PROVIDER_ID]
        rng = Random(17)
        serves = verifies = 0
        for index in range(40):
            roll = rng.random()
            if roll < 0.5:
                outcome = provider.handle_request(handshake(dep, now_s=float(index)))
                assert outcome == Serve(SERVICE_ID)
                serves += 1
                verifies += 1
            elif roll < 0.8:
                payload = bytes(
                    rng.randbytes(9 if protocol is Protocol.PROXY else 15)
                )
                assert isinstance(provider.handle_request(payload), Reject)
                verifies += 1
            else:
                assert provider.handle_request(rng.randbytes(3)) == Reject(
                    RejectReason.MALFORMED
                )
        expected = serves * REQUEST_ENERGY_J + verifies * VERIFY_J
        assert provider.ledger.drained_j == pytest.approx(expected, rel=1e-12)
