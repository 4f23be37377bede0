"""Teleoperation boundary: human commands and terrain edits into the running
MPC, telemetry out.

Wire format: newline-delimited JSON messages over a single bidirectional
byte-stream connection. A connection that opens with an HTTP ``GET`` is
upgraded to a WebSocket carrying the same JSON messages one-per-frame, so
browser clients speak the identical schema without a bridge.

Messages in:
    {"type": "cmd_vel", "vx": float, "vy": float, "seq": int, "t_client": float}
    {"type": "terrain", "patches": [...], "seq": int}          (full replacement)
    {"type": "field_request", "bbox": [x0, y0, x1, y1], "resolution": float, "seq": int}

Messages out:
    {"type": "telemetry", ...}          once per MPC tick (resync: true on connect)
    {"type": "ack", "kind": ..., "seq": ..., "superseded_seq": ..., "noop": bool}
    {"type": "error", "message": ..., ...}
    {"type": "field_grid", "seq": ..., "xs": [...], "ys": [...], "penalty": [[...]]}

Concurrency: the MPC loop owns all planning state; per-connection reader and
writer threads communicate with it only through two single-slot latest-wins
mailboxes (commands, terrain) and bounded per-client send queues that drop
oldest frames under back-pressure. The first connection is read-write;
additional connections receive telemetry read-only. Commands older than the
staleness timeout decay the reference to zero.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import io as sio
from .field import field_grid
from .geometry import TerrainModel
from .model import torque_proxy
from .planner import MpcController, MpcLog, Scenario, VelocitySegment, _simulate_tick

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

COMMAND_TIMEOUT = 1.0  # s without a command before the reference decays to zero
FIELD_GRID_CELL_CAP = 40_000


class _LatestSlot:
    """Single-slot latest-wins mailbox keyed by client sequence number."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = None
        self._seq = -1
        self._applied_seq = -1

    def offer(self, seq: int, value) -> bool:
        """Store if newer than anything seen; returns False for stale seqs."""
        with self._lock:
            if seq <= self._seq:
                return False
            self._seq = seq
            self._value = value
            return True

    def take(self):
        """Pop the pending value, if any, as (seq, superseded_seq, value)."""
        with self._lock:
            if self._value is None:
                return None
            seq, value = self._seq, self._value
            superseded = self._applied_seq
            self._applied_seq = seq
            self._value = None
            return seq, superseded, value


@dataclass
class TickStats:
    t_sim: float
    t_wall: float
    solve_ms: float


class TeleopServer:
    """Serves one scenario: a real-time MPC loop plus socket I/O."""

    def __init__(
        self,
        scenario: Scenario,
        host: str = "127.0.0.1",
        port: int = 0,
        vmax: float = 1.0,
        real_time: bool = True,
        sndbuf: int | None = None,  # shrink the kernel send buffer (back-pressure tests)
    ):
        self._sndbuf = sndbuf
        # the joystick owns the reference; start parked at zero
        self.scenario = replace(scenario, reference_velocity=(VelocitySegment(0.0, 0.0, 0.0),))
        self.controller = MpcController(self.scenario)
        self.vmax = float(vmax)
        self.real_time = real_time
        self.host = host

        self._cmd_slot = _LatestSlot()
        self._terrain_slot = _LatestSlot()
        self._acks: deque = deque()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._last_cmd_wall: float | None = None
        self.tick_stats: list[TickStats] = []
        self.log = MpcLog("teleop", np.asarray(self.scenario.robot.hip_offsets, dtype=float))

        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        self._threads: list[threading.Thread] = []

    # -- lifecycle --

    def start(self) -> None:
        accept = threading.Thread(target=self._accept_loop, name="teleop-accept", daemon=True)
        loop = threading.Thread(target=self._mpc_loop, name="teleop-mpc", daemon=True)
        self._threads = [accept, loop]
        for t in self._threads:
            t.start()

    def shutdown(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()
        self._listener.close()

    def serve_forever(self) -> None:
        self.start()
        while not self._stop.is_set():
            time.sleep(0.2)

    def run_for(self, seconds: float) -> None:
        self.start()
        deadline = time.monotonic() + seconds
        while time.monotonic() < deadline and not self._stop.is_set():
            time.sleep(0.05)
        self.shutdown()

    # -- MPC loop (owner of all planning state) --

    def _mpc_loop(self) -> None:
        scenario = self.scenario
        tick = scenario.mpc.tick
        state = scenario.initial_state
        rng = np.random.default_rng(scenario.seed)
        t_sim = 0.0
        next_deadline = time.monotonic() + tick
        j = 0
        while not self._stop.is_set():
            self._apply_mailboxes()
            u0, _sol, diag = self.controller.step(state, t_sim)
            state = _simulate_tick(
                self.controller.scenario, self.controller, state, u0, t_sim, t_sim + tick, self.log, rng
            )
            j += 1
            t_sim = j * tick
            self._publish_telemetry(state, t_sim, u0, diag)
            self.tick_stats.append(TickStats(t_sim, time.monotonic(), diag.solve_ms))
            if self.real_time:
                now = time.monotonic()
                if next_deadline > now:
                    time.sleep(next_deadline - now)
                    next_deadline += tick
                else:
                    next_deadline = now + tick

    def _apply_mailboxes(self) -> None:
        got = self._cmd_slot.take()
        now = time.monotonic()
        if got is not None:
            seq, superseded, (vx, vy) = got
            vx = float(np.clip(vx, -self.vmax, self.vmax))
            vy = float(np.clip(vy, -self.vmax, self.vmax))
            self.controller.set_reference(vx, vy)
            self._last_cmd_wall = now
            self._acks.append({"type": "ack", "kind": "cmd_vel", "seq": seq, "superseded_seq": superseded})
        elif self._last_cmd_wall is not None and now - self._last_cmd_wall > COMMAND_TIMEOUT:
            # stale joystick: safety stop
            self.controller.set_reference(0.0, 0.0)
            self._last_cmd_wall = None

        got = self._terrain_slot.take()
        if got is not None:
            seq, superseded, terrain = got
            noop = _same_terrain(self.controller.scenario.terrain, terrain)
            if not noop:
                self.controller.replace_terrain(terrain)
            self._acks.append(
                {"type": "ack", "kind": "terrain", "seq": seq, "superseded_seq": superseded, "noop": noop}
            )

    def _publish_telemetry(self, state, t_sim, u0, diag) -> None:
        stance = self.controller.scenario.gait.stance_at(t_sim)
        robot = self.controller.scenario.robot
        taus = [
            torque_proxy(state, i, u0[i], robot) if stance[i] else 0.0
            for i in range(robot.n_feet)
        ]
        frame = {
            "type": "telemetry",
            "t": round(t_sim, 6),
            "r": [round(float(v), 5) for v in state.r],
            "rdot": [round(float(v), 5) for v in state.rdot],
            "feet": [[round(float(v), 5) for v in foot] for foot in state.feet],
            "stance": list(stance),
            "planned": [
                {
                    "foot": int(f),
                    "t": round(float(tt), 4),
                    "x": round(float(xy[0]), 5),
                    "y": round(float(xy[1]), 5),
                    "patch": pid,
                    "penalty": round(float(pen), 6),
                }
                for f, tt, xy, pid, pen in diag.planned_touchdowns
            ],
            "torque_proxies": [round(float(v), 4) for v in taus],
            "solve_ms": round(diag.solve_ms, 3),
            "degraded": diag.degraded,
        }
        acks = []
        while self._acks:
            acks.append(self._acks.popleft())
        with self._clients_lock:
            self._clients = [c for c in self._clients if not c.closed]
            clients = list(self._clients)
        for client in clients:
            for ack in acks:
                client.send_json(ack)
            client.send_json(dict(frame, drops=client.drops))

    # -- socket plumbing --

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            if self._sndbuf:
                conn.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self._sndbuf)
            with self._clients_lock:
                primary = not any(c.primary and not c.closed for c in self._clients)
                client = _Client(conn, self, primary=primary)
                self._clients.append(client)
                self._clients = [c for c in self._clients if not c.closed]
            client.start()

    def handle_message(self, client: "_Client", msg: dict) -> None:
        mtype = msg.get("type")
        if mtype == "cmd_vel":
            if not client.primary:
                client.send_json({"type": "error", "message": "read-only connection"})
                return
            try:
                seq = int(msg["seq"])
                pair = (float(msg["vx"]), float(msg["vy"]))
            except (KeyError, TypeError, ValueError):
                client.send_json({"type": "error", "message": "malformed cmd_vel"})
                return
            self._cmd_slot.offer(seq, pair)
        elif mtype == "terrain":
            if not client.primary:
                client.send_json({"type": "error", "message": "read-only connection"})
                return
            try:
                seq = int(msg["seq"])
                terrain, warnings = sio.terrain_from_dict(
                    {"version": sio.SCHEMA_VERSION, "patches": msg["patches"]}
                )
                if terrain.n_patches == 0:
                    raise ValueError("terrain must keep at least one patch")
            except (KeyError, TypeError, ValueError, sio.SchemaError) as exc:
                client.send_json(
                    {"type": "error", "kind": "terrain_rejected", "message": str(exc),
                     "seq": msg.get("seq")}
                )
                return
            self._terrain_slot.offer(seq, terrain)
        elif mtype == "field_request":
            try:
                x0, y0, x1, y1 = (float(v) for v in msg["bbox"])
                res = float(msg["resolution"])
                grid = field_grid(
                    self.controller.scenario.terrain, (x0, y0), (x1, y1), res,
                    cell_cap=FIELD_GRID_CELL_CAP,
                )
            except Exception as exc:
                client.send_json({"type": "error", "kind": "field_rejected", "message": str(exc),
                                  "seq": msg.get("seq")})
                return
            client.send_json(
                {
                    "type": "field_grid",
                    "seq": msg.get("seq"),
                    "xs": [round(float(v), 5) for v in grid.xs],
                    "ys": [round(float(v), 5) for v in grid.ys],
                    "penalty": [[round(float(v), 5) for v in row] for row in grid.penalty],
                }
            )
        else:
            client.send_json({"type": "error", "message": f"unknown message type {mtype!r}"})

    def resync_frame(self) -> dict:
        terrain = self.controller.scenario.terrain
        return {
            "type": "telemetry",
            "resync": True,
            "terrain": sio.terrain_to_dict(terrain),
            "vmax": self.vmax,
            "t": None,
        }


def _same_terrain(a: TerrainModel, b: TerrainModel) -> bool:
    return sio.terrain_to_dict(a) == sio.terrain_to_dict(b)


class _Client:
    """One connection: framing (raw NDJSON or WebSocket), a reader thread
    feeding the server, and a writer thread draining a bounded queue."""

    QUEUE_MAX = 64

    def __init__(self, sock: socket.socket, server: TeleopServer, primary: bool):
        self.sock = sock
        self.server = server
        self.primary = primary
        self.closed = False
        self.drops = 0
        self.websocket = False
        self._queue: deque = deque()
        self._queue_lock = threading.Lock()
        self._queue_ready = threading.Event()
        self._buffer = b""

    def start(self) -> None:
        threading.Thread(target=self._run, daemon=True).start()

    def _run(self) -> None:
        try:
            # sniff the first bytes to pick the framing; silent listeners get
            # raw NDJSON telemetry without having to send anything
            self.sock.settimeout(0.3)
            try:
                first = self.sock.recv(4096)
                if not first:
                    self.close()
                    return
            except socket.timeout:
                first = b""
            if first.startswith(b"GET "):
                self._websocket_handshake(first)
                self.websocket = True
            else:
                self._buffer = first
            writer = threading.Thread(target=self._writer, daemon=True)
            writer.start()
            self.send_json(self.server.resync_frame())
            self.sock.settimeout(0.5)
            self._reader()
        except OSError:
            pass
        finally:
            self.close()

    # -- reader --

    def _reader(self) -> None:
        while not self.closed and not self.server._stop.is_set():
            for msg in self._read_messages():
                try:
                    doc = json.loads(msg)
                    if not isinstance(doc, dict):
                        raise ValueError("not an object")
                except ValueError:
                    self.send_json({"type": "error", "message": "malformed JSON"})
                    continue
                self.server.handle_message(self, doc)
            if self.closed:
                return

    def _read_messages(self):
        """Yield complete JSON texts from the socket (newline or WS framing)."""
        if not self.websocket:
            while b"\n" not in self._buffer:
                try:
                    chunk = self.sock.recv(4096)
                except socket.timeout:
                    return
                except OSError:
                    self.close()
                    return
                if not chunk:
                    self.close()
                    return
                self._buffer += chunk
            lines = self._buffer.split(b"\n")
            self._buffer = lines[-1]
            for line in lines[:-1]:
                line = line.strip()
                if line:
                    yield line.decode("utf-8", errors="replace")
            return
        # WebSocket frames
        frame = self._read_ws_frame()
        if frame is None:
            return
        opcode, payload = frame
        if opcode == 8:  # close
            self.close()
        elif opcode == 9:  # ping
            self._send_raw(_ws_encode(payload, opcode=10))
        elif opcode in (1, 2):
            yield payload.decode("utf-8", errors="replace")

    def _recv_exact(self, n: int) -> bytes | None:
        while len(self._buffer) < n:
            try:
                chunk = self.sock.recv(4096)
            except socket.timeout:
                return None
            except OSError:
                self.close()
                return None
            if not chunk:
                self.close()
                return None
            self._buffer += chunk
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def _read_ws_frame(self):
        head = self._recv_exact(2)
        if head is None:
            return None
        opcode = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            ext = self._recv_exact(2)
            if ext is None:
                return None
            length = int.from_bytes(ext, "big")
        elif length == 127:
            ext = self._recv_exact(8)
            if ext is None:
                return None
            length = int.from_bytes(ext, "big")
        mask = b"\x00\x00\x00\x00"
        if masked:
            mask = self._recv_exact(4)
            if mask is None:
                return None
        payload = self._recv_exact(length) if length else b""
        if payload is None:
            return None
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload

    def _websocket_handshake(self, first: bytes) -> None:
        data = first
        while b"\r\n\r\n" not in data:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise OSError("connection closed during handshake")
            data += chunk
        head, _, rest = data.partition(b"\r\n\r\n")
        self._buffer = rest
        key = ""
        for line in head.decode("latin-1").split("\r\n"):
            if line.lower().startswith("sec-websocket-key:"):
                key = line.split(":", 1)[1].strip()
        accept = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
        )
        self.sock.sendall(response.encode("latin-1"))

    # -- writer --

    def send_json(self, obj: dict) -> None:
        """Non-blocking enqueue; oldest frames drop under back-pressure."""
        with self._queue_lock:
            if len(self._queue) >= self.QUEUE_MAX:
                self._queue.popleft()
                self.drops += 1
            self._queue.append(obj)
        self._queue_ready.set()

    def _writer(self) -> None:
        while not self.closed:
            self._queue_ready.wait(timeout=0.5)
            while True:
                with self._queue_lock:
                    if not self._queue:
                        self._queue_ready.clear()
                        break
                    obj = self._queue.popleft()
                text = json.dumps(obj, separators=(",", ":"))
                try:
                    if self.websocket:
                        self._send_raw(_ws_encode(text.encode()))
                    else:
                        self._send_raw(text.encode() + b"\n")
                except OSError:
                    self.close()
                    return

    def _send_raw(self, data: bytes) -> None:
        # send() either ships >= 1 byte or times out having sent nothing, so a
        # stalled peer stalls this writer (and the queue drops) without ever
        # corrupting the frame stream
        view = memoryview(data)
        while view and not self.closed:
            try:
                n = self.sock.send(view)
            except socket.timeout:
                continue
            view = view[n:]

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.sock.close()
        except OSError:
            pass


def _ws_encode(payload: bytes, opcode: int = 1) -> bytes:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 65536:
        header += bytes([126]) + n.to_bytes(2, "big")
    else:
        header += bytes([127]) + n.to_bytes(8, "big")
    return header + payload
