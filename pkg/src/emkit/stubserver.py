"""Scripted local cutout server for tests and offline demos.

Serves a known :class:`Volume3D` at OCP-shaped cutout paths::

    /ocp/ca/<token>/<format>/<res>/<x0>,<x1>/<y0>,<y1>/<z0>,<z1>/

Faults are scripted per cutout extent as a queue of actions consumed one per
request; once the queue is empty the real payload is served.  An action is an
HTTP status code (e.g. ``500``), ``"short"`` (truncated body), ``"ok"``, or
``("sleep", seconds)`` to provoke client timeouts.

    with StubCutoutServer(volume) as srv:
        srv.script((0, 8, 0, 8, 0, 16), [500, 500])
        fetch_all(manifest, base=srv.base_url, ...)
        srv.request_count((0, 8, 0, 8, 0, 16))   # -> 3
"""

from __future__ import annotations

import json
import re
import threading
import time
from collections import Counter, defaultdict, deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

_CUTOUT = re.compile(
    r"^/ocp/ca/(?P<token>[^/]+)/(?P<fmt>[^/]+)/(?P<res>\d+)/"
    r"(?P<x0>\d+),(?P<x1>\d+)/(?P<y0>\d+),(?P<y1>\d+)/(?P<z0>\d+),(?P<z1>\d+)/?$"
)
_INFO = re.compile(r"^/ocp/ca/(?P<token>[^/]+)/info/?$")


class _QuietServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # clients that time out on scripted sleeps drop the connection mid-reply
        pass


class StubCutoutServer:
    def __init__(self, volume, token="kasthuri11", host="127.0.0.1"):
        self.volume = volume
        self.token = token
        self._scripts = defaultdict(deque)
        self._counts = Counter()
        self._lock = threading.Lock()
        self._httpd = _QuietServer((host, 0), self._handler_class())
        self._thread = None

    @property
    def base_url(self):
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def script(self, extent, actions):
        key = tuple(extent.as_tuple() if hasattr(extent, "as_tuple") else extent)
        with self._lock:
            self._scripts[key].extend(actions)

    def request_count(self, extent=None):
        with self._lock:
            if extent is None:
                return sum(self._counts.values())
            key = tuple(extent.as_tuple() if hasattr(extent, "as_tuple") else extent)
            return self._counts[key]

    def reset(self):
        with self._lock:
            self._scripts.clear()
            self._counts.clear()

    def start(self):
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
        )
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _next_action(self, key):
        with self._lock:
            self._counts[key] += 1
            q = self._scripts.get(key)
            return q.popleft() if q else "ok"

    def _cut(self, key):
        x0, x1, y0, y1, z0, z1 = key
        e = self.volume.extent
        if not (e.x0 <= x0 < x1 <= e.x1 and e.y0 <= y0 < y1 <= e.y1 and e.z0 <= z0 < z1 <= e.z1):
            return None
        sub = self.volume.data[z0 - e.z0:z1 - e.z0, y0 - e.y0:y1 - e.y0, x0 - e.x0:x1 - e.x0]
        return sub.tobytes()

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _send(self, status, body=b"", ctype="application/octet-stream"):
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                m = _INFO.match(self.path)
                if m and m.group("token") == server.token:
                    e = server.volume.extent
                    info = {"token": server.token, "extent": list(e.as_tuple())}
                    return self._send(200, json.dumps(info).encode(), "application/json")
                m = _CUTOUT.match(self.path)
                if m is None or m.group("token") != server.token:
                    return self._send(404)
                key = tuple(int(m.group(k)) for k in ("x0", "x1", "y0", "y1", "z0", "z1"))
                action = server._next_action(key)
                if isinstance(action, tuple) and action[0] == "sleep":
                    time.sleep(action[1])
                    action = "ok"
                if isinstance(action, int):
                    return self._send(action, f"scripted {action}".encode(), "text/plain")
                body = server._cut(key)
                if body is None:
                    return self._send(404)
                if action == "short":
                    body = body[:-1]
                return self._send(200, body)

        return Handler
