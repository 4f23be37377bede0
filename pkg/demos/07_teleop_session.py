"""A scripted teleoperation session against the live MPC service.

Starts the service in-process, connects over the newline-delimited JSON
socket, ramps a virtual joystick, edits the terrain mid-run (widening the
gap), and shows the planner relocating its upcoming footsteps. The same
protocol (plus a WebSocket upgrade) drives the browser panel in frontend/.
"""

import json
import socket
import time

from stepfield import io as sio
from stepfield.teleop import TeleopServer


class Client:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port))
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(0.05)
        self.buf = b""

    def send(self, obj):
        self.sock.sendall(json.dumps(obj).encode() + b"\n")

    def frames(self, duration):
        end = time.monotonic() + duration
        while time.monotonic() < end:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            if not chunk:
                return
            self.buf += chunk
            *lines, self.buf = self.buf.split(b"\n")
            for line in lines:
                if line.strip():
                    yield json.loads(line)


scenario = sio.bundled_scenario("trot_gap30")
server = TeleopServer(scenario, port=0)
server.start()
print(f"service on port {server.port}")

client = Client(server.port)
seq = 0
for frame in client.frames(0.5):
    if frame.get("resync"):
        print(f"resync: {len(frame['terrain']['patches'])} patches, vmax {frame['vmax']}")
        break

print("\nramping the stick to 0.25 m/s...")
t_end = time.monotonic() + 2.0
while time.monotonic() < t_end:
    seq += 1
    client.send({"type": "cmd_vel", "vx": 0.25, "vy": 0.0, "seq": seq, "t_client": time.time()})
    time.sleep(1 / 30)

for frame in client.frames(0.3):
    if frame.get("type") == "telemetry" and frame.get("t"):
        print(f"t={frame['t']:.2f}s base=({frame['r'][0]:+.2f}, {frame['r'][1]:+.2f}) "
              f"rdot_x={frame['rdot'][0]:+.2f} solve={frame['solve_ms']:.1f}ms")
        break

print("\nwidening the gap from 0.30 m to 0.50 m...")
doc = sio.terrain_to_dict(scenario.terrain)
doc["patches"][1]["vertices"] = [[1.7, -0.4], [2.9, -0.4], [2.9, 0.4], [1.7, 0.4]]
seq += 1
client.send({"type": "terrain", "patches": doc["patches"], "seq": seq})

shown = 0
for frame in client.frames(3.0):
    if frame.get("type") == "ack" and frame.get("kind") == "terrain":
        print(f"terrain applied (seq {frame['seq']}, superseded {frame['superseded_seq']})")
    if frame.get("type") == "telemetry" and frame.get("planned"):
        for p in frame["planned"]:
            if p["t"] <= frame["t"] + 0.7:
                print(f"  upcoming touchdown foot {p['foot']} @ t={p['t']:.2f}: "
                      f"({p['x']:+.3f}, {p['y']:+.3f}) on {p['patch']} penalty {p['penalty']}")
                shown += 1
        if shown >= 6:
            break

seq += 1
client.send({"type": "cmd_vel", "vx": 0.0, "vy": 0.0, "seq": seq, "t_client": time.time()})
time.sleep(0.2)
server.shutdown()
print("\nsession closed")
