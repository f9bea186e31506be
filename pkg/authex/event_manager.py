# -*- coding: utf-8 -*-
import struct
import threading
from collections import Counter, deque, namedtuple

from authex.enclave_runtime import ENTRY_HANDLE_INPUT
from authex.errors import (AuthexError, NodeUnreachable, UnknownModule,
                           WireError)
from authex.log_utils import init_logging, log_frame
from authex.parameters_utils import set_parameters
from authex.wire import (ENTRY_UNLOAD, OP_ACK, OP_ADD_CONNECTION,
                         OP_CALL_ENTRY, OP_ERROR, OP_LOAD_MODULE,
                         OP_REMOTE_EVENT, OPCODE_NAMES, check_reply,
                         decode_add_connection, decode_call_entry,
                         decode_load_reply, decode_remote_event,
                         encode_add_connection, encode_call_entry,
                         encode_error, encode_load_reply,
                         encode_remote_event)


"""
This module contains the untrusted per-node runtime. The event manager
loads modules, forwards untrusted entry calls, keeps the output routing
table and moves sealed events between nodes. It never sees plaintext
payloads or keys.
"""

logger = init_logging('event_manager')

RoutingEntry = namedtuple('RoutingEntry', ['src_module_id', 'conn_id',
                                           'dest_address', 'dest_module_id'])


class EventManager(object):
    """
    **Parameters**

    node : tee_sim.Node

    network : network.VirtualNetwork or network.TcpNetwork

    params : dict, optional
        'queue_size' : int
            bound of each route's FIFO; the oldest event is dropped on
            overflow
    """

    default_params = {
        'queue_size': 1024,
    }

    def __init__(self, node, network, params={}):
        set_parameters(self, self.default_params, params)
        self.node = node
        self.network = network
        self.routes = {}
        self.queues = {}
        self.dropped = Counter()
        self.frame_log = []
        self._lock = threading.RLock()
        self._servers = {
            OP_LOAD_MODULE: self.serve_load_module,
            OP_CALL_ENTRY: self.serve_call_entry,
            OP_ADD_CONNECTION: self.serve_add_connection,
        }
        node.attach(self, network)
        network.register(self.address, self.handle_frame)

    @property
    def address(self):
        return self.node.config.address

    def __repr__(self):
        return 'EventManager(%s, routes=%d, dropped=%s)' % (
            self.address, len(self.routes), dict(self.dropped))

    def handle_frame(self, opcode, body):
        """
        Entry point of the transport.

        **Returns**

        reply : (opcode, body) or None
            None for RemoteEvent frames
        """
        if opcode == OP_REMOTE_EVENT:
            outcome = self.handle_remote_event(body)
            self._log(opcode, outcome, size=len(body))
            return None
        server = self._servers.get(opcode)
        if server is None:
            error = WireError('unknown opcode 0x%02x' % opcode)
            self._log(opcode, 'error', error=error.__class__.__name__)
            return OP_ERROR, encode_error(error)
        try:
            reply = server(body)
        except AuthexError as e:
            self._log(opcode, 'error', error=e.__class__.__name__)
            logger.debug('%s failed: %s', OPCODE_NAMES[opcode], e)
            return OP_ERROR, encode_error(e)
        except Exception as e:
            self._log(opcode, 'error', error=e.__class__.__name__)
            logger.exception('%s failed', OPCODE_NAMES[opcode])
            return OP_ERROR, encode_error(e)
        self._log(opcode, 'ok', size=len(body))
        return OP_ACK, reply

    #
    # requests
    #

    def serve_load_module(self, body):
        module_id, identity = self.node.load_module(body)
        return encode_load_reply(module_id, identity)

    def serve_call_entry(self, body):
        module_id, entry, args = decode_call_entry(body)
        if entry == ENTRY_UNLOAD:
            self.node.unload_module(module_id)
            self._remove_routes(module_id)
            return b''
        return self.node.call_entry(module_id, entry, args)

    def serve_add_connection(self, body):
        conn_id, src, address, dest = decode_add_connection(body)
        with self._lock:
            # overwriting re-targets an existing route
            self.routes[(src, conn_id)] = RoutingEntry(src, conn_id, address,
                                                       dest)
        logger.debug('%s: route (%d, %d) -> %s/%d', self.address, src,
                     conn_id, address, dest)
        return b''

    #
    # events
    #

    def handle_local_event(self, src_module_id, conn_id, sealed):
        """Queues an output event on its route and flushes the route."""
        key = (src_module_id, conn_id)
        with self._lock:
            route = self.routes.get(key)
            if route is None:
                self.dropped['no-route'] += 1
                self._log(OP_REMOTE_EVENT, 'dropped', reason='no-route',
                          src=src_module_id, conn=conn_id)
                return
            queue = self.queues.get(key)
            if queue is None:
                queue = self.queues[key] = deque(maxlen=self.queue_size)
            if len(queue) == queue.maxlen:
                self.dropped['overflow'] += 1
            queue.append(bytes(sealed))
            self._flush(route, queue)

    def handle_remote_event(self, body):
        """
        Hands a sealed event to its destination module. Nothing is
        surfaced to the sender.

        **Returns**

        outcome : str
        """
        try:
            dest, conn_id, payload = decode_remote_event(body)
        except WireError:
            self.dropped['malformed'] += 1
            return 'dropped'
        try:
            self.node.call_entry(dest, ENTRY_HANDLE_INPUT,
                                 struct.pack('>H', conn_id) + payload)
        except UnknownModule:
            self.dropped['no-module'] += 1
            return 'dropped'
        except Exception:
            logger.exception('%s: event for %d failed', self.address, dest)
            self.dropped['failed'] += 1
            return 'dropped'
        return 'delivered'

    def on_reset(self):
        with self._lock:
            self.routes.clear()
            self.queues.clear()

    def delivery_log(self):
        return list(self.frame_log)

    #
    # subfunctions
    #

    def _flush(self, route, queue):
        while queue:
            sealed = queue[0]
            body = encode_remote_event(route.dest_module_id, route.conn_id,
                                       sealed)
            try:
                self.network.send(route.dest_address, OP_REMOTE_EVENT, body,
                                  src=self.address)
            except NodeUnreachable as e:
                # kept queued for the next attempt
                self.dropped['unreachable'] += 1
                self._log(OP_REMOTE_EVENT, 'lost', dest=route.dest_address,
                          conn=route.conn_id)
                logger.warning('%s: delivery to %s failed: %s',
                               self.address, route.dest_address, e)
                return
            queue.popleft()
            self._log(OP_REMOTE_EVENT, 'forwarded', dest=route.dest_address,
                      conn=route.conn_id)

    def _remove_routes(self, module_id):
        with self._lock:
            for key in [k for k in self.routes if k[0] == module_id]:
                del self.routes[key]
                self.queues.pop(key, None)

    def _log(self, opcode, outcome, **fields):
        line = log_frame(logger, self.network.now(), opcode, outcome,
                         node=self.node.node_id, **fields)
        self.frame_log.append(line)


class ManagerClient(object):
    """
    Deployer-side stub of one event manager.

    **Parameters**

    network : transport used to reach the manager

    address : str
        host:port of the manager

    src : str or None
        address of the caller, for latency accounting
    """

    def __init__(self, network, address, src=None):
        self.network = network
        self.address = address
        self.src = src

    def __repr__(self):
        return 'ManagerClient(%s)' % self.address

    def load_module(self, package_bytes):
        """
        **Returns**

        (module_id, identity) : (int, bytes)
        """
        return decode_load_reply(self._request(OP_LOAD_MODULE,
                                               package_bytes))

    def call_entry(self, module_id, entry, args=b''):
        return self._request(OP_CALL_ENTRY,
                             encode_call_entry(module_id, entry, args))

    def unload_module(self, module_id):
        self.call_entry(module_id, ENTRY_UNLOAD)

    def add_connection(self, conn_id, src_module_id, dest_address,
                       dest_module_id):
        self._request(OP_ADD_CONNECTION,
                      encode_add_connection(conn_id, src_module_id,
                                            dest_address, dest_module_id))

    def remote_event(self, dest_module_id, conn_id, sealed):
        self.network.send(self.address, OP_REMOTE_EVENT,
                          encode_remote_event(dest_module_id, conn_id, sealed),
                          src=self.src)

    def _request(self, opcode, body):
        reply_opcode, reply = self.network.request(self.address, opcode, body,
                                                   src=self.src)
        return check_reply(reply_opcode, reply)
