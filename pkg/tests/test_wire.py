import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordforge.distributed import (
    DistributedConfig,
    TcpMasterTransport,
    make_worker,
    partition_for,
    run_distributed,
    run_tcp_worker,
)
from coordforge.distributed import core, wire
from coordforge.distributed.wire import ProtocolError, TransportError

from conftest import random_problem, run_over_tcp

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


# -- byte layout --------------------------------------------------------------

def test_header_layout_is_little_endian():
    raw = wire.encode_frame(wire.BROADCAST, 7, b"xyz")
    assert raw[:4] == bytes([0x31, 0x44, 0x43, 0x53])
    assert raw[4] == 3
    assert raw[5:9] == (7).to_bytes(4, "little")
    assert raw[9:17] == (3).to_bytes(8, "little")
    assert raw[17:] == b"xyz"
    assert wire.HEADER.size == 17


def test_update_payload_layout():
    payload = wire.encode_update(3, [1.5, -2.0], 0.25, 4.0, 0.0)
    expected = (struct.pack("<I", 3) + struct.pack("<Q", 2) + struct.pack("<2d", 1.5, -2.0)
                + struct.pack("<3d", 0.25, 4.0, 0.0))
    assert payload == expected


def test_broadcast_payload_layout():
    payload = wire.encode_broadcast(0.5, [1.0, 2.0, 3.0])
    assert payload == struct.pack("<d", 0.5) + struct.pack("<Q", 3) + struct.pack("<3d", 1, 2, 3)


def test_register_and_shutdown_payloads():
    assert wire.encode_register(9) == struct.pack("<I", 9)
    assert wire.decode_frame(wire.encode_frame(wire.SHUTDOWN, 0)).payload == b""


@settings(max_examples=100, deadline=None)
@given(worker=st.integers(0, 2**32 - 1), delta=st.lists(finite, max_size=40),
       cross=finite, sq=st.floats(0, 1e300), label=finite)
def test_update_round_trip(worker, delta, cross, sq, label):
    back = wire.decode_update(wire.encode_update(worker, delta, cross, sq, label))
    assert back[0] == worker
    np.testing.assert_array_equal(back[1], delta)
    assert back[2:] == (cross, sq, label)


@settings(max_examples=100, deadline=None)
@given(gamma=finite, shared=st.lists(finite, max_size=40), epoch=st.integers(0, 2**32 - 1))
def test_broadcast_frame_round_trip(gamma, shared, epoch):
    frame = wire.decode_frame(wire.encode_frame(wire.BROADCAST, epoch,
                                                wire.encode_broadcast(gamma, shared)))
    assert frame.epoch == epoch and frame.msg_type == wire.BROADCAST
    g, s = wire.decode_broadcast(frame.payload)
    assert g == gamma
    np.testing.assert_array_equal(s, shared)


@settings(max_examples=50, deadline=None)
@given(coords=st.lists(st.integers(0, 2**40), max_size=30))
def test_slice_round_trip(coords):
    weights = np.arange(len(coords), dtype=np.float64) / 3
    wid, c, w = wire.decode_slice(wire.encode_slice(4, coords, weights))
    assert wid == 4
    assert c.tolist() == coords
    np.testing.assert_array_equal(w, weights)


# -- malformed frames ---------------------------------------------------------

GOOD_UPDATE = wire.encode_update(0, [1.0, 2.0], 0.0, 1.0, 0.0)


@pytest.mark.parametrize("raw", [
    b"\x00" * 17,
    wire.encode_frame(wire.UPDATE, 1, GOOD_UPDATE)[:10],
    struct.pack("<IBIQ", wire.MAGIC, 99, 0, 0),
    struct.pack("<IBIQ", wire.MAGIC, wire.UPDATE, 0, 5) + b"abc",
    struct.pack("<IBIQ", wire.MAGIC, wire.UPDATE, 0, 1 << 40),
])
def test_bad_frames_rejected(raw):
    with pytest.raises(ProtocolError):
        wire.decode_frame(raw)


@pytest.mark.parametrize("payload", [
    b"",
    GOOD_UPDATE[:-1],
    GOOD_UPDATE + b"\x00",
    struct.pack("<IQ", 0, 10**9) + b"\x00" * 40,
    wire.encode_update(0, [np.nan], 0.0, 1.0, 0.0),
    wire.encode_update(0, [1.0], np.inf, 1.0, 0.0),
    wire.encode_update(0, [1.0], 0.0, -1.0, 0.0),
])
def test_bad_update_payloads_rejected(payload):
    with pytest.raises(ProtocolError):
        wire.decode_update(payload)


@pytest.mark.parametrize("payload", [b"\x00", wire.encode_broadcast(1.0, [1.0]) + b"\x00",
                                     wire.encode_broadcast(1.0, [1.0, 2.0])[:-3]])
def test_bad_broadcast_payloads_rejected(payload):
    with pytest.raises(ProtocolError):
        wire.decode_broadcast(payload)


def test_bad_register_and_slice_rejected():
    with pytest.raises(ProtocolError):
        wire.decode_register(b"\x00\x00")
    with pytest.raises(ProtocolError):
        wire.decode_slice(wire.encode_slice(0, [1, 2], [1.0, 2.0])[:-1])


def test_expect_checks_type_and_epoch():
    frame = wire.Frame(wire.UPDATE, 3, b"")
    assert wire.expect(frame, wire.UPDATE, 3) is frame
    with pytest.raises(ProtocolError):
        wire.expect(frame, wire.BROADCAST, 3)
    with pytest.raises(ProtocolError, match="epoch"):
        wire.expect(frame, wire.UPDATE, 4)


def test_recv_exact_reports_disconnect():
    a, b = socket.socketpair()
    a.sendall(b"abc")
    a.close()
    with pytest.raises(TransportError):
        wire.recv_exact(b, 10)
    b.close()


@pytest.mark.parametrize("keep", [5, 30])
def test_frame_cut_short_is_protocol_error(keep):
    a, b = socket.socketpair()
    a.sendall(wire.encode_frame(wire.UPDATE, 1, GOOD_UPDATE)[:keep])
    a.close()
    with pytest.raises(ProtocolError, match="cut short"):
        wire.read_frame(b)
    b.close()


def test_clean_close_between_frames_is_transport_error():
    a, b = socket.socketpair()
    a.close()
    with pytest.raises(TransportError) as err:
        wire.read_frame(b)
    assert not isinstance(err.value, ProtocolError)
    b.close()


# -- loopback runs ------------------------------------------------------------

@pytest.mark.parametrize("form", ["primal", "dual"])
@pytest.mark.parametrize("mode", ["average", "adaptive"])
def test_tcp_matches_in_process(form, mode):
    p = random_problem(21, n=120, m=50, density=0.1, lam=1e-2)
    config = DistributedConfig(n_epochs=8, seed=5, form=form, mode=mode)
    model_tcp, tcp = run_over_tcp(p, 2, config)
    model_inp, inp = run_distributed(p, 2, config)
    assert [(r.epoch, r.gamma, r.primal_obj, r.dual_obj, r.gap) for r in tcp] == \
           [(r.epoch, r.gamma, r.primal_obj, r.dual_obj, r.gap) for r in inp]
    assert model_tcp.weights.tobytes() == model_inp.weights.tobytes()


def _fake_worker(p, config, address, worker_id, k, bad_update: bytes, done: threading.Event):
    """Registers, answers the first broadcast correctly, then sends ``bad_update`` raw."""
    coords = partition_for(p, k, config).blocks[worker_id]
    sock = socket.create_connection(address, timeout=10)
    try:
        wire.send_frame(sock, wire.REGISTER, 0, wire.encode_register(worker_id))
        wire.expect(wire.read_frame(sock), wire.BROADCAST, 0)
        wire.send_frame(sock, wire.SLICE, 0,
                        wire.encode_slice(worker_id, coords, np.zeros(len(coords))))
        sock.sendall(bad_update)
        sock.shutdown(socket.SHUT_WR)
        done.wait(10)
    finally:
        sock.close()


BAD_ROUND_ONE = {
    "magic": lambda n: struct.pack("<IBIQ", 0xDEADBEEF, wire.UPDATE, 1, 0),
    "epoch": lambda n: wire.encode_frame(wire.UPDATE, 2,
                                         wire.encode_update(1, np.zeros(n), 0, 0, 0)),
    "type": lambda n: wire.encode_frame(wire.SLICE, 1, wire.encode_slice(1, [], [])),
    "length": lambda n: wire.encode_frame(wire.UPDATE, 1,
                                          wire.encode_update(1, np.zeros(n + 1), 0, 0, 0)),
    "nan": lambda n: wire.encode_frame(wire.UPDATE, 1,
                                       wire.encode_update(1, np.full(n, np.nan), 0, 0, 0)),
    "truncated": lambda n: wire.encode_frame(wire.UPDATE, 1,
                                             wire.encode_update(1, np.zeros(n), 0, 0, 0))[:-8],
    "impostor": lambda n: wire.encode_frame(wire.UPDATE, 1,
                                            wire.encode_update(0, np.zeros(n), 0, 0, 0)),
}


@pytest.mark.parametrize("kind", sorted(BAD_ROUND_ONE))
def test_injected_bad_update_aborts_before_aggregation(kind, monkeypatch):
    p = random_problem(22, n=60, m=30)
    config = DistributedConfig(n_epochs=3, seed=1)
    applied = []
    real = core.aggregate

    def spy(*args, **kwargs):
        out = real(*args, **kwargs)
        applied.append(out)
        return out

    monkeypatch.setattr(core, "aggregate", spy)

    transport = TcpMasterTransport(2, "127.0.0.1", 0, timeout=5)
    state = make_worker(p, partition_for(p, 2, config), 0, "primal")
    honest = threading.Thread(target=_quietly, daemon=True,
                              args=(run_tcp_worker, state, transport.address, 1, 3, 5))
    honest.start()
    done = threading.Event()
    bad = BAD_ROUND_ONE[kind](p.n)
    fake = threading.Thread(target=_fake_worker,
                            args=(p, config, transport.address, 1, 2, bad, done), daemon=True)
    fake.start()
    try:
        with pytest.raises(ProtocolError):
            run_distributed(p, 2, config, transport=transport)
    finally:
        done.set()
    assert applied == []
    honest.join(5)


def _quietly(fn, *args):
    try:
        fn(*args)
    except TransportError:
        pass
