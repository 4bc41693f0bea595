"""Manager/worker distribution of point batches over TCP.

Framing: 4-byte big-endian length prefix followed by a UTF-8 JSON body.
Sessions authenticate both directions with an HMAC challenge-response over
a shared secret before any payload is exchanged. Each connection then
carries an init payload (space spec, template text, processor config) and a
sequence of batch requests answered in FIFO order.
"""

import hmac
import hashlib
import json
import logging
import secrets
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

from .errors import NetworkError
from .formulas import NamedValues
from .pipeline import PointRecord

log = logging.getLogger("parascan.network")

DEFAULT_PORT = 31415
PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT = 10.0
CONNECT_TIMEOUT = 10.0
MIN_BATCH_TIMEOUT = 60.0
MAX_FRAME_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class WorkerAddress:
    host: str
    port: int = DEFAULT_PORT

    def __str__(self):
        return "%s:%d" % (self.host, self.port)


def parse_workers(text):
    """Parse the comma-separated ``workers`` directive into addresses."""
    addresses = []
    for entry in (text or "").split(","):
        entry = entry.strip()
        if not entry:
            continue
        host, sep, port_text = entry.partition(":")
        if sep:
            try:
                port = int(port_text)
            except ValueError:
                raise NetworkError("malformed worker port in %r" % entry) from None
        else:
            port = DEFAULT_PORT
        if not 1 <= port <= 65535:
            raise NetworkError(
                "worker port must be between 1 and 65535, got %d" % port
            )
        addresses.append(WorkerAddress(host.strip(), port))
    return addresses


# -- framing ----------------------------------------------------------------

def send_frame(sock, message):
    body = json.dumps(message, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(body)) + body)


def _recv_exact(sock, n):
    chunks = []
    while n > 0:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise NetworkError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock):
    (length,) = struct.unpack(">I", _recv_exact(sock, 4))
    if length > MAX_FRAME_BYTES:
        raise NetworkError("frame of %d bytes exceeds the limit" % length)
    body = _recv_exact(sock, length)
    try:
        message = json.loads(body.decode("utf-8"))
    except ValueError as exc:
        raise NetworkError("malformed frame: %s" % exc) from None
    if not isinstance(message, dict):
        raise NetworkError("frame is not an object")
    return message


# -- authentication ----------------------------------------------------------

def _mac(authkey, nonce_hex):
    return hmac.new(
        authkey.encode("utf-8"), bytes.fromhex(nonce_hex), hashlib.sha256
    ).hexdigest()


def server_handshake(sock, authkey):
    """Mutual challenge-response; raises and closes on any mismatch."""
    sock.settimeout(HANDSHAKE_TIMEOUT)
    nonce = secrets.token_bytes(32).hex()
    send_frame(sock, {"t": "challenge", "v": PROTOCOL_VERSION, "nonce": nonce})
    reply = recv_frame(sock)
    if reply.get("t") != "auth" or not isinstance(reply.get("mac"), str):
        raise NetworkError("peer did not authenticate")
    if not hmac.compare_digest(reply["mac"], _mac(authkey, nonce)):
        send_frame(sock, {"t": "denied"})
        raise NetworkError("authentication failed (wrong authkey)")
    client_nonce = reply.get("nonce")
    if not isinstance(client_nonce, str):
        raise NetworkError("peer sent no counter-challenge")
    send_frame(sock, {"t": "auth", "mac": _mac(authkey, client_nonce)})


def client_handshake(sock, authkey):
    sock.settimeout(HANDSHAKE_TIMEOUT)
    challenge = recv_frame(sock)
    if challenge.get("t") != "challenge":
        raise NetworkError("peer sent no challenge")
    if challenge.get("v") != PROTOCOL_VERSION:
        raise NetworkError(
            "protocol version mismatch: peer speaks %r" % challenge.get("v")
        )
    nonce = secrets.token_bytes(32).hex()
    send_frame(sock, {
        "t": "auth", "mac": _mac(authkey, challenge["nonce"]), "nonce": nonce,
    })
    reply = recv_frame(sock)
    if reply.get("t") == "denied":
        raise NetworkError("worker refused the authkey")
    if reply.get("t") != "auth" or not hmac.compare_digest(
        reply.get("mac", ""), _mac(authkey, nonce)
    ):
        raise NetworkError("peer failed the counter-challenge")


# -- record wire form ---------------------------------------------------------

def record_to_wire(record):
    return {
        "pars": list(record.pars),
        "vars": list(record.vars) if record.vars is not None else None,
        "data": list(record.data) if record.data is not None else None,
        "status": record.status,
        "reason": record.reason,
    }


def record_from_wire(payload, spec):
    pars = NamedValues(spec.par_names, payload["pars"])
    vars_values = payload.get("vars")
    data_values = payload.get("data")
    return PointRecord(
        pars,
        NamedValues(spec.var_names, vars_values) if vars_values is not None else None,
        NamedValues(spec.data_names, data_values) if data_values is not None else None,
        status=payload.get("status", "valid"),
        reason=payload.get("reason"),
    )


# -- proportional allocation ---------------------------------------------------

def allocate(total, capacities):
    """Split ``total`` points proportionally to slot counts.

    ``capacities`` is an ordered list of ``(key, slots)``; returns an ordered
    dict key -> count summing to ``total`` (largest-remainder rounding, ties
    broken by input order).
    """
    active = [(key, slots) for key, slots in capacities if slots > 0]
    if not active:
        raise NetworkError("no capacity to allocate points to")
    slot_sum = sum(slots for _, slots in active)
    counts = {}
    remainders = []
    assigned = 0
    for order, (key, slots) in enumerate(active):
        exact = total * slots / slot_sum
        base = int(exact)
        counts[key] = base
        assigned += base
        remainders.append((-(exact - base), order, key))
    remainders.sort()
    for _, _, key in remainders[: total - assigned]:
        counts[key] += 1
    return counts


# -- worker side ---------------------------------------------------------------

class WorkerDisplay:
    """Tracks requested batches and the last ten completed ones."""

    def __init__(self, emit=None):
        self.active = {}
        self.completed = deque(maxlen=10)
        self._emit = emit if emit is not None else (lambda line: log.info("%s", line))
        self._lock = threading.Lock()

    def requested(self, peer, batch_id, size):
        with self._lock:
            self.active[(peer, batch_id)] = size
            self._emit("batch %s from %s: %d points requested" % (batch_id, peer, size))

    def finished(self, peer, batch_id):
        with self._lock:
            size = self.active.pop((peer, batch_id), None)
            self.completed.append((peer, batch_id, size))
            self._emit(
                "batch %s from %s done; last completed: %s"
                % (batch_id, peer,
                   ", ".join(str(b) for _, b, _ in self.completed))
            )


class WorkerServer:
    """Serves point batches to authenticated managers.

    ``context_builder(init_payload)`` returns an evaluator factory for one
    connection; evaluations run on the shared local slot pool. Batches are
    answered in request order per connection. A vanished manager never stops
    the server: undeliverable results are dropped.
    """

    def __init__(self, port, authkey, pool, context_builder, host="",
                 display=None):
        self.authkey = authkey
        self.pool = pool
        self.context_builder = context_builder
        self.display = display or WorkerDisplay()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            raise NetworkError("cannot listen on port %d: %s" % (port, exc)) from None
        self._sock.listen(16)
        self._stopping = threading.Event()
        self._threads = []

    @property
    def port(self):
        return self._sock.getsockname()[1]

    def serve_forever(self):
        log.info("worker listening on port %d", self.port)
        while not self._stopping.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            thread = threading.Thread(
                target=self._serve_connection, args=(conn, addr), daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def start(self):
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self):
        self._stopping.set()
        try:
            self._sock.close()
        except OSError:
            pass

    def _serve_connection(self, conn, addr):
        peer = "%s:%d" % addr
        token = object()
        try:
            try:
                server_handshake(conn, self.authkey)
            except NetworkError as exc:
                log.warning("refused connection from %s: %s", peer, exc)
                return
            conn.settimeout(None)
            init = recv_frame(conn)
            if init.get("t") != "init" or init.get("v") != PROTOCOL_VERSION:
                send_frame(conn, {"t": "err", "msg": "expected init frame v%d"
                                  % PROTOCOL_VERSION})
                return
            factory = self.context_builder(init.get("payload") or {})
            send_frame(conn, {"t": "ready", "v": PROTOCOL_VERSION,
                              "slots": self.pool.slots})
            while True:
                try:
                    message = recv_frame(conn)
                except NetworkError:
                    break  # manager vanished; keep serving others
                kind = message.get("t")
                if kind == "survey":
                    send_frame(conn, {"t": "capacity", "slots": self.pool.slots})
                elif kind == "batch":
                    batch_id = message.get("id")
                    points = message.get("points") or []
                    self.display.requested(peer, batch_id, len(points))
                    items = [
                        ("b%s.%d" % (batch_id, i), pars)
                        for i, pars in enumerate(points)
                    ]
                    records = self.pool.run_batch(items, factory, token=token)
                    self.display.finished(peer, batch_id)
                    try:
                        send_frame(conn, {
                            "t": "result", "id": batch_id,
                            "records": [record_to_wire(r) for r in records],
                        })
                    except OSError:
                        break  # results undeliverable; drop them, stay alive
                elif kind == "bye":
                    break
                else:
                    send_frame(conn, {"t": "err", "msg": "unknown frame %r" % kind})
        except Exception as exc:  # one bad connection must not kill the server
            log.warning("connection from %s failed: %s", peer, exc)
        finally:
            self.pool.release(token)
            try:
                conn.close()
            except OSError:
                pass


# -- manager side ---------------------------------------------------------------

class WorkerClient:
    """One authenticated session with a worker."""

    def __init__(self, address, authkey, init_payload):
        self.address = address
        self.sock = socket.create_connection(
            (address.host, address.port), timeout=CONNECT_TIMEOUT
        )
        try:
            client_handshake(self.sock, authkey)
            send_frame(self.sock, {
                "t": "init", "v": PROTOCOL_VERSION, "payload": init_payload,
            })
            ready = recv_frame(self.sock)
            if ready.get("t") != "ready":
                raise NetworkError(
                    "worker %s sent %r instead of ready" % (address, ready.get("t"))
                )
            self.slots = int(ready.get("slots", 1))
        except Exception:
            self.sock.close()
            raise

    def run_batch(self, batch_id, points, needs_template=False, timeout=None):
        self.sock.settimeout(timeout)
        send_frame(self.sock, {
            "t": "batch", "id": batch_id,
            "points": [list(p) for p in points],
            "needs_template": needs_template,
        })
        reply = recv_frame(self.sock)
        if reply.get("t") != "result" or reply.get("id") != batch_id:
            raise NetworkError(
                "worker %s answered out of order (%r)" % (self.address, reply)
            )
        records = reply.get("records")
        if not isinstance(records, list) or len(records) != len(points):
            raise NetworkError("worker %s returned a malformed batch" % self.address)
        return records

    def close(self):
        try:
            send_frame(self.sock, {"t": "bye"})
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class Dispatcher:
    """Spreads each batch across local slots and remote workers.

    Sub-batch sizes are proportional to slot counts. A worker that fails or
    times out (3x the previous batch wall time, floor 60 s) is dropped for
    the current batch, its points are recomputed locally, and a reconnect is
    attempted on the next batch.
    """

    def __init__(self, pool, local_factory, spec, workers=(), authkey=None,
                 init_payload=None, needs_template=False):
        self.pool = pool
        self.local_factory = local_factory
        self.spec = spec
        self.workers = list(workers)
        self.authkey = authkey
        self.init_payload = init_payload or {}
        self.needs_template = needs_template
        self.clients = {}
        self._batch_counter = 0
        self._last_batch_seconds = None
        if self.workers and authkey is None:
            raise NetworkError("workers configured but no authkey set")

    def _client(self, address):
        client = self.clients.get(address)
        if client is not None:
            return client
        try:
            client = WorkerClient(address, self.authkey, self.init_payload)
        except (OSError, NetworkError) as exc:
            log.warning("worker %s unreachable: %s", address, exc)
            self.clients[address] = None
            return None
        log.info("worker %s connected with %d slots", address, client.slots)
        self.clients[address] = client
        return client

    def survey(self):
        """Capacities of every reachable target, local slots included."""
        capacities = [("local", self.pool.slots)]
        for address in self.workers:
            client = self._client(address)
            if client is not None:
                capacities.append((address, client.slots))
        return capacities

    @property
    def total_slots(self):
        return sum(slots for _, slots in self.survey())

    def _drop(self, address):
        client = self.clients.get(address)
        if client is not None:
            client.close()
        self.clients[address] = None

    def run_batch(self, items):
        """Evaluate ``[(point_id, pars), ...]``; results keep input order."""
        started = time.monotonic()
        capacities = self.survey()
        # reconnect attempts happen every batch: forget known-down workers
        for address in self.workers:
            if self.clients.get(address) is None:
                self.clients.pop(address, None)
        if len(capacities) == 1:
            records = self.pool.run_batch(
                [(pid, pars) for pid, _, pars in _indexed(items)],
                self.local_factory,
            )
            self._last_batch_seconds = time.monotonic() - started
            return records

        counts = allocate(len(items), capacities)
        indexed = list(_indexed(items))
        cursor = 0
        assignments = []  # (key, sub_items)
        for key, _ in capacities:
            count = counts.get(key, 0)
            assignments.append((key, indexed[cursor:cursor + count]))
            cursor += count

        results = {}
        failed = []
        threads = []
        timeout = None
        if self._last_batch_seconds is not None:
            timeout = max(MIN_BATCH_TIMEOUT, 3.0 * self._last_batch_seconds)

        def run_remote(address, sub_items):
            client = self.clients.get(address)
            self._batch_counter += 1
            batch_id = self._batch_counter
            try:
                wires = client.run_batch(
                    batch_id, [pars for _, _, pars in sub_items],
                    needs_template=self.needs_template, timeout=timeout,
                )
            except (OSError, NetworkError) as exc:
                log.warning("worker %s failed mid-batch: %s; re-dispatching "
                            "locally", address, exc)
                self._drop(address)
                failed.extend(sub_items)
                return
            for (index, _, _), wire in zip(sub_items, wires):
                results[index] = record_from_wire(wire, self.spec)

        local_items = []
        for key, sub_items in assignments:
            if not sub_items:
                continue
            if key == "local":
                local_items = sub_items
            else:
                thread = threading.Thread(
                    target=run_remote, args=(key, sub_items), daemon=True
                )
                thread.start()
                threads.append(thread)

        if local_items:
            for (index, pid, pars), record in zip(
                local_items,
                self.pool.run_batch(
                    [(pid, pars) for _, pid, pars in local_items],
                    self.local_factory,
                ),
            ):
                results[index] = record
        for thread in threads:
            thread.join()
        if failed:
            for (index, pid, pars), record in zip(
                failed,
                self.pool.run_batch(
                    [(pid, pars) for _, pid, pars in failed], self.local_factory
                ),
            ):
                results[index] = record
        self._last_batch_seconds = time.monotonic() - started
        return [results[i] for i in range(len(items))]

    def close(self):
        for client in self.clients.values():
            if client is not None:
                client.close()
        self.clients.clear()


def _indexed(items):
    for index, (point_id, pars) in enumerate(items):
        yield index, point_id, pars
