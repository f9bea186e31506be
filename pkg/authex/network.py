# -*- coding: utf-8 -*-
import heapq
import itertools
import socket
import socketserver
import threading
import time
from collections import defaultdict, namedtuple

from authex.errors import NodeUnreachable, ScenarioError, WireError
from authex.log_utils import init_logging
from authex.parameters_utils import host_of, parse_address, set_parameters
from authex.wire import read_frame, write_frame


"""
This module contains the two transports used between event managers
and deployers: real TCP sockets, and a deterministic virtual network
with a simulated clock used by the test harness.

Both expose the same methods:

    register(address, handler)       handler(opcode, body) -> reply or None
    request(address, opcode, body)   synchronous, returns (opcode, body)
    send(address, opcode, body)      fire-and-forget
    wait_for(predicate, timeout)     -> bool
    notify()
    now()
"""

logger = init_logging('network')

Frame = namedtuple('Frame', ['src', 'dest', 'opcode', 'body'])


class VirtualNetwork(object):
    """
    In-process network driven by a single scheduler. Sent frames are
    delivered after the link latency; requests are answered inline.

    **Parameters**

    params : dict, optional
        'latency' : float
            seconds per inter-host link (same-host links are free)
        'link_latency' : dict
            (src host, dest host) -> seconds, overrides 'latency'
        'max_steps' : int
            scheduler budget for run()
    """

    default_params = {
        'latency': 0.001,
        'link_latency': None,
        'max_steps': 10 ** 6,
    }

    def __init__(self, params={}):
        set_parameters(self, self.default_params, params)
        self.link_latency = dict(self.link_latency or {})
        self.clock = 0.0
        self.steps = 0
        self.endpoints = {}
        self.down = set()
        # observer(ts, frame) sees every frame traversal
        self.observers = []
        # interceptor(frame, deliveries) -> deliveries, a list of
        # (extra delay, Frame); applies to send()
        self.interceptors = []
        # request_filter(frame) -> frame or None; applies to request()
        self.request_filters = []
        self._queue = []
        self._seq = itertools.count()

    def register(self, address, handler):
        self.endpoints[address] = handler

    def unregister(self, address):
        self.endpoints.pop(address, None)

    def set_down(self, address, down=True):
        if down:
            self.down.add(address)
        else:
            self.down.discard(address)

    def latency_between(self, src, dest):
        if src is None:
            return self.latency
        src_host, dest_host = host_of(src), host_of(dest)
        if (src_host, dest_host) in self.link_latency:
            return self.link_latency[(src_host, dest_host)]
        if src_host == dest_host:
            return 0.0
        return self.latency

    def schedule(self, delay, callback, *args):
        heapq.heappush(self._queue, (self.clock + max(delay, 0.0),
                                     next(self._seq), callback, args))

    def schedule_at(self, when, callback, *args):
        self.schedule(when - self.clock, callback, *args)

    def send(self, address, opcode, body, src=None):
        frame = Frame(src, address, opcode, bytes(body))
        deliveries = [(0.0, frame)]
        for interceptor in self.interceptors:
            deliveries = interceptor(frame, deliveries)
        for delay, delivered in deliveries:
            latency = self.latency_between(delivered.src, delivered.dest)
            self.schedule(latency + delay, self._deliver, delivered)

    def request(self, address, opcode, body, src=None):
        frame = Frame(src, address, opcode, bytes(body))
        for request_filter in self.request_filters:
            frame = request_filter(frame)
            if frame is None:
                raise NodeUnreachable('request to %s lost' % address)
        handler = self._handler(address)
        latency = self.latency_between(src, address)
        self.clock += latency
        self._observe(frame)
        reply = handler(frame.opcode, frame.body)
        if reply is None:
            raise WireError('%s sent no reply' % address)
        self.clock += latency
        self._observe(Frame(address, src, reply[0], reply[1]))
        return reply

    def step(self):
        if not self._queue:
            return False
        when, _, callback, args = heapq.heappop(self._queue)
        self.clock = max(self.clock, when)
        self.steps += 1
        callback(*args)
        return True

    def run(self, until=None):
        """Processes scheduled work until the queue drains or `until`."""
        start = self.steps
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.clock = max(self.clock, until)
                break
            if self.steps - start >= self.max_steps:
                raise ScenarioError('scheduler budget of %d steps exhausted'
                                    % self.max_steps)
            self.step()

    def pending(self):
        return len(self._queue)

    def wait_for(self, predicate, timeout):
        deadline = self.clock + timeout
        while not predicate():
            if not self._queue or self._queue[0][0] > deadline:
                self.clock = max(self.clock, deadline)
                return predicate()
            self.step()
        return True

    def notify(self):
        pass

    def now(self):
        return self.clock

    #
    # subfunctions
    #

    def _handler(self, address):
        if address in self.down or address not in self.endpoints:
            raise NodeUnreachable('%s is unreachable' % address)
        return self.endpoints[address]

    def _observe(self, frame):
        for observer in self.observers:
            observer(self.clock, frame)

    def _deliver(self, frame):
        self._observe(frame)
        try:
            handler = self._handler(frame.dest)
        except NodeUnreachable:
            logger.debug('frame to %s lost: unreachable', frame.dest)
            return
        try:
            handler(frame.opcode, frame.body)
        except Exception:
            logger.exception('handler of %s failed', frame.dest)


class _FrameHandler(socketserver.BaseRequestHandler):

    def handle(self):
        while True:
            try:
                frame = read_frame(self.request)
            except (OSError, WireError) as e:
                logger.debug('closing link: %s', e)
                return
            if frame is None:
                return
            reply = self.server.frame_handler(*frame)
            if reply is not None:
                write_frame(self.request, *reply)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TcpNetwork(object):
    """
    Frames over TCP. Events to one destination share a persistent
    stream so they arrive in order; requests use their own connection.

    **Parameters**

    params : dict, optional
        'timeout' : float
            socket timeout in seconds
    """

    default_params = {
        'timeout': 5.0,
    }

    def __init__(self, params={}):
        set_parameters(self, self.default_params, params)
        self._servers = []
        self._links = {}
        self._link_locks = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._cond = threading.Condition()
        self._epoch = time.monotonic()

    def register(self, address, handler):
        host, port = parse_address(address)
        server = _Server((host, port), _FrameHandler)
        server.frame_handler = handler
        thread = threading.Thread(target=server.serve_forever,
                                  name='authex-%s' % address, daemon=True)
        thread.start()
        self._servers.append(server)
        logger.info('listening on %s', address)
        return server

    def request(self, address, opcode, body, src=None):
        host, port = parse_address(address)
        try:
            with socket.create_connection((host, port),
                                          timeout=self.timeout) as sock:
                write_frame(sock, opcode, body)
                reply = read_frame(sock)
        except OSError as e:
            raise NodeUnreachable('%s: %s' % (address, e))
        if reply is None:
            raise NodeUnreachable('%s closed the connection' % address)
        return reply

    def send(self, address, opcode, body, src=None):
        with self._locks_guard:
            lock = self._link_locks[address]
        with lock:
            sock = self._links.get(address)
            try:
                if sock is None:
                    host, port = parse_address(address)
                    sock = socket.create_connection((host, port),
                                                    timeout=self.timeout)
                    self._links[address] = sock
                write_frame(sock, opcode, body)
            except OSError as e:
                self._links.pop(address, None)
                if sock is not None:
                    sock.close()
                raise NodeUnreachable('%s: %s' % (address, e))

    def wait_for(self, predicate, timeout):
        with self._cond:
            return self._cond.wait_for(predicate, timeout)

    def notify(self):
        with self._cond:
            self._cond.notify_all()

    def now(self):
        return time.monotonic() - self._epoch

    def close(self):
        for server in self._servers:
            server.shutdown()
            server.server_close()
        for sock in self._links.values():
            sock.close()
        self._servers = []
        self._links = {}
