# -*- coding: utf-8 -*-
import enum
import struct
import threading
from collections import deque, namedtuple
from types import MappingProxyType

from authex import behaviors
from authex.crypto_core import (COUNTER_MAX, KEY_SIZE, TAG_SIZE, ZERO_KEY,
                                CipherSuite, RandomSource, aead_open,
                                aead_seal, check_key, counter_aad,
                                is_supported, kdf128, mac_tag, make_nonce)
from authex.errors import (AuthexError, AuthFailure, ChallengeTooShort,
                           NodeUnreachable, NonceExhausted, StaleSequence,
                           Timeout, UnknownBehavior, UnknownConnection,
                           UnknownEndpoint, UnknownEntry, UnknownModule,
                           Unestablished, UnsupportedCipher)
from authex.log_utils import init_logging
from authex.module_package import EndpointKind, ModulePackage


"""
This module contains the security-module abstraction: connection and
callback tables, the SetKey / Attest / HandleInput entry points, the
output wrapper, entry dispatch and synchronous requests.
"""

logger = init_logging('enclave_runtime')

ENTRY_SET_KEY = 0
ENTRY_ATTEST = 1
ENTRY_HANDLE_INPUT = 2

MIN_CHALLENGE = 16
SETKEY_BODY_SIZE = 2 + 2 + 2 + KEY_SIZE + TAG_SIZE + 1
REPLY_LABEL = b'REPLY'
DEFAULT_REQUEST_TIMEOUT = 1.0


class Direction(enum.Enum):
    INPUT = 'input'
    OUTPUT = 'output'
    REQUEST = 'request'
    HANDLER = 'handler'

    @classmethod
    def of(cls, kind):
        return cls(kind.value)


class Connection(object):
    """
    One directed channel slot of a module.

    An all-zero key marks the slot unestablished. `nonce` is the next
    counter to seal or expect; `reply_nonce` tracks the reply stream of
    request/handler pairs.
    """

    __slots__ = ('conn_id', 'io_id', 'direction', 'key', 'nonce', 'suite',
                 'reply_nonce', 'dead')

    def __init__(self, conn_id, io_id, direction, key=ZERO_KEY,
                 suite=CipherSuite.AES_GCM_128):
        self.conn_id = conn_id
        self.io_id = io_id
        self.direction = direction
        self.key = bytes(key)
        self.nonce = 0
        self.suite = CipherSuite.from_name(suite)
        self.reply_nonce = 0
        self.dead = False

    @property
    def established(self):
        return self.key != ZERO_KEY and not self.dead

    def reply_key(self):
        return kdf128(self.key, REPLY_LABEL)

    def __repr__(self):
        # no key material
        return ('Connection(conn_id=%d, io_id=%d, %s, nonce=%d, %s%s)'
                % (self.conn_id, self.io_id, self.direction.value,
                   self.nonce, self.suite.name,
                   ', dead' if self.dead else ''))


class ConnectionTable(object):

    def __init__(self):
        self._entries = {}

    def get(self, conn_id):
        try:
            return self._entries[conn_id]
        except KeyError:
            raise UnknownConnection('no connection %d' % conn_id)

    def install(self, connection):
        # last writer wins
        self._entries[connection.conn_id] = connection

    def remove(self, conn_id):
        self._entries.pop(conn_id, None)

    def clear(self):
        self._entries.clear()

    def for_io(self, io_id):
        return [self._entries[c] for c in sorted(self._entries)
                if self._entries[c].io_id == io_id
                and self._entries[c].established]

    def __contains__(self, conn_id):
        return conn_id in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries))


CallbackEntry = namedtuple('CallbackEntry', ['kind', 'label', 'handler'])


def make_callback_table(package, behavior):
    entries = {}
    for endpoint in package.endpoints():
        if endpoint.kind not in (EndpointKind.INPUT, EndpointKind.HANDLER):
            continue
        handler = behavior.handler_for(endpoint.label)
        if handler is None:
            raise UnknownBehavior('%s has no handler for %s'
                                  % (package.name, endpoint.label))
        entries[endpoint.io_id] = CallbackEntry(endpoint.kind,
                                                endpoint.label, handler)
    return MappingProxyType(entries)


class _PendingReply(object):

    def __init__(self, counter):
        self.counter = counter
        self.done = False
        self.reply = None
        self.error = None


class LocalHost(object):
    """
    Minimal host for modules running outside a node. Published events
    are recorded and, when a route is known, delivered synchronously.
    """

    request_timeout = DEFAULT_REQUEST_TIMEOUT

    def __init__(self, random=None):
        self.random = random or RandomSource()
        self.published = []
        self.fired = []
        self.routes = {}

    def connect(self, src, conn_id, dest):
        self.routes[(src.module_id, conn_id)] = dest

    def publish(self, module, conn_id, sealed):
        self.published.append((module.module_id, conn_id, sealed))
        dest = self.routes.get((module.module_id, conn_id))
        if dest is not None:
            dest.handle_input(conn_id, sealed)

    def wait_for(self, predicate, timeout):
        return predicate()

    def notify(self):
        pass

    def caller_id(self):
        return 0

    def call(self, caller, target, entry, args):
        raise UnknownModule('no module %d on a local host' % target)

    def mmio_device(self, module_id):
        return None

    def untrusted_request(self, address, opcode, body):
        raise NodeUnreachable('local host has no network')

    def now(self):
        return 0.0

    def on_fire(self, module, label, payload):
        self.fired.append((module.module_id, label, payload))


class ModuleContext(object):
    """
    View of the running module handed to behavior handlers and entries.
    Outputs are buffered and published when the handler completes.
    """

    def __init__(self, module, conn_id=None):
        self._module = module
        self.conn_id = conn_id
        self.outputs = []

    @property
    def module_id(self):
        return self._module.module_id

    @property
    def caller_id(self):
        return self._module.host.caller_id()

    def output(self, label, payload):
        endpoint = self._module.package.endpoint(label)
        if endpoint is None or endpoint.kind is not EndpointKind.OUTPUT:
            raise UnknownEndpoint('%s is not an output' % label)
        self.outputs.append((endpoint.io_id, bytes(payload)))

    def request(self, label, payload, timeout=None):
        endpoint = self._module.package.endpoint(label)
        if endpoint is None or endpoint.kind is not EndpointKind.REQUEST:
            raise UnknownEndpoint('%s is not a request' % label)
        return self._module.request_sync(endpoint.io_id, payload, timeout)

    def call(self, target, entry, args=b''):
        return self._module.host.call(self._module.module_id, target, entry,
                                      args)

    def random_bytes(self, n):
        return self._module.host.random.random_bytes(n)

    def open_sealed(self, nonce, ciphertext, tag, aad=b''):
        """Opens a blob sealed with AES-GCM-128 under the module key."""
        return aead_open(CipherSuite.AES_GCM_128, self._module._module_key,
                         nonce, ciphertext, tag, aad)

    def install_connection(self, conn_id, label, key,
                           suite=CipherSuite.AES_GCM_128):
        endpoint = self._module.package.endpoint(label)
        if endpoint is None:
            raise UnknownEndpoint('no endpoint %s' % label)
        check_key(key)
        self._module.connection_table.install(
            Connection(conn_id, endpoint.io_id, Direction.of(endpoint.kind),
                       key, suite))

    def remove_connection(self, conn_id):
        self._module.connection_table.remove(conn_id)

    def clear_connections(self):
        self._module.connection_table.clear()

    def mmio_device(self):
        return self._module.host.mmio_device(self._module.module_id)

    def untrusted_request(self, address, opcode, body):
        return self._module.host.untrusted_request(address, opcode, body)

    def now(self):
        return self._module.host.now()


class SecurityModule(object):
    """
    An isolated module instance. The module key stays private: no
    method returns it or anything derived from it except tags.

    **Parameters**

    package : ModulePackage

    module_key : bytes

    behavior : behaviors.Behavior

    cb_table : mapping io_id -> CallbackEntry

    host : object
        node services (publishing, waiting, caller ids); see LocalHost

    module_id : int

    identity : bytes
        32-byte measurement
    """

    def __init__(self, package, module_key, behavior, cb_table, host=None,
                 module_id=0, identity=None):
        self.package = package
        self._module_key = check_key(module_key)
        self.behavior = behavior
        self.cb_table = cb_table
        self.host = host or LocalHost()
        self.module_id = module_id
        self.identity = identity or package.identity()
        self.connection_table = ConnectionTable()
        self.setkey_seq = 0
        self._lock = threading.RLock()
        self._busy = False
        self._backlog = deque()
        self._pending = {}

    @property
    def name(self):
        return self.package.name

    def __repr__(self):
        return '%s(%s, id=%d, connections=%d)' % (
            self.__class__.__name__, self.package.name, self.module_id,
            len(self.connection_table))

    #
    # entry points
    #

    def dispatch_entry(self, entry, args=b''):
        """
        Routes 0 to SetKey, 1 to Attest, 2 to HandleInput and higher
        ids to the behavior's entry points.
        """
        args = bytes(args)
        if entry == ENTRY_SET_KEY:
            self.set_key(args)
            return b''
        if entry == ENTRY_ATTEST:
            return self.attest(args)
        if entry == ENTRY_HANDLE_INPUT:
            if len(args) >= 2:
                conn_id = struct.unpack('>H', args[:2])[0]
                self.handle_input(conn_id, args[2:])
            return b''
        function = self.behavior.entry_for(entry)
        if function is None:
            raise UnknownEntry('%s has no entry %d' % (self.name, entry))
        with self._lock:
            return self._invoke(function, None, args, reraise=True) or b''

    def set_key(self, body):
        """
        Installs a connection key sealed by the deployer under the
        module key. `body` is conn_id | io_id | seq | ct | tag | suite.
        """
        if len(body) != SETKEY_BODY_SIZE:
            raise AuthFailure('SetKey body must be %d bytes'
                              % SETKEY_BODY_SIZE)
        header = body[:6]
        conn_id, io_id, seq = struct.unpack('>HHH', header)
        ciphertext = body[6:6 + KEY_SIZE]
        tag = body[6 + KEY_SIZE:6 + KEY_SIZE + TAG_SIZE]
        suite = CipherSuite.from_name(body[-1])
        if not is_supported(suite):
            raise UnsupportedCipher('%s is not implemented' % suite.name)
        with self._lock:
            key = aead_open(CipherSuite.AES_GCM_128, self._module_key,
                            make_nonce(seq), ciphertext, tag, header)
            if seq != self.setkey_seq:
                raise StaleSequence('SetKey sequence %d, expected %d'
                                    % (seq, self.setkey_seq))
            if seq == COUNTER_MAX:
                raise NonceExhausted('SetKey sequence exhausted')
            direction = self._direction_for(io_id)
            check_key(key)
            self.connection_table.install(
                Connection(conn_id, io_id, direction, key, suite))
            self.setkey_seq = seq + 1
        logger.debug('%s: connection %d set on io %d (%s)', self.name,
                     conn_id, io_id, direction.value)

    def attest(self, challenge):
        if len(challenge) < MIN_CHALLENGE:
            raise ChallengeTooShort('challenges are at least %d bytes'
                                    % MIN_CHALLENGE)
        return mac_tag(self._module_key, challenge)

    def handle_input(self, conn_id, data):
        """
        Delivers one sealed event. Events that do not authenticate at the
        expected nonce are ignored; this method never raises.
        """
        try:
            self._receive(conn_id, bytes(data))
        except AuthexError as e:
            logger.debug('%s: dropped event on %d: %s: %s', self.name,
                         conn_id, e.__class__.__name__, e)
        except Exception:
            logger.exception('%s: event on %d failed', self.name, conn_id)

    def handle_output(self, output_io_id, payload):
        """
        Seals `payload` for every established connection of an output.

        **Returns**

        events : list of (conn_id, sealed event)
        """
        endpoint = self.package.endpoint_by_id(output_io_id)
        if endpoint is None or endpoint.kind is not EndpointKind.OUTPUT:
            raise UnknownEndpoint('%s: io %d is not an output'
                                  % (self.name, output_io_id))
        events = []
        for conn in self.connection_table.for_io(output_io_id):
            if conn.nonce >= COUNTER_MAX:
                conn.dead = True
                logger.warning('%s: connection %d exhausted its nonces',
                               self.name, conn.conn_id)
                continue
            events.append((conn.conn_id,
                           _seal(conn.suite, conn.key, conn.nonce, payload)))
            conn.nonce += 1
        return events

    def request_sync(self, request_io_id, payload, timeout=None):
        """
        Sends a request event and blocks until the sealed reply arrives.

        **Returns**

        reply : bytes
        """
        endpoint = self.package.endpoint_by_id(request_io_id)
        if endpoint is None or endpoint.kind is not EndpointKind.REQUEST:
            raise UnknownEndpoint('%s: io %d is not a request'
                                  % (self.name, request_io_id))
        connections = self.connection_table.for_io(request_io_id)
        if not connections:
            raise Unestablished('%s: %s has no handler connected'
                                % (self.name, endpoint.label))
        conn = connections[0]
        if conn.nonce >= COUNTER_MAX:
            conn.dead = True
            raise NonceExhausted('connection %d' % conn.conn_id)
        if timeout is None:
            timeout = self.host.request_timeout
        counter = conn.nonce
        sealed = _seal(conn.suite, conn.key, counter, payload)
        conn.nonce += 1
        pending = _PendingReply(counter)
        self._pending[conn.conn_id] = pending
        try:
            self.host.publish(self, conn.conn_id, sealed)
            self.host.wait_for(lambda: pending.done, timeout)
        finally:
            self._pending.pop(conn.conn_id, None)
        if not pending.done:
            raise Timeout('%s: no reply on %d' % (self.name, conn.conn_id))
        if pending.error is not None:
            raise pending.error
        conn.reply_nonce = counter + 1
        return pending.reply

    #
    # subfunctions
    #

    def _direction_for(self, io_id):
        entry = self.cb_table.get(io_id)
        if entry is not None:
            return Direction.of(entry.kind)
        endpoint = self.package.endpoint_by_id(io_id)
        if endpoint is None:
            raise UnknownEndpoint('%s has no io %d' % (self.name, io_id))
        return Direction.of(endpoint.kind)

    def _receive(self, conn_id, data):
        conn = self.connection_table.get(conn_id)
        if conn.dead:
            raise NonceExhausted('connection %d is dead' % conn_id)
        if not conn.established:
            raise Unestablished('connection %d has no key' % conn_id)
        if conn.direction is Direction.REQUEST:
            self._receive_reply(conn, data)
            return
        if conn.direction is Direction.OUTPUT:
            raise UnknownConnection('connection %d is an output' % conn_id)
        with self._lock:
            if self._busy:
                self._backlog.append((conn_id, data))
                return
            self._deliver(conn, data)
        self._drain_backlog()

    def _deliver(self, conn, data):
        counter = conn.nonce
        if counter >= COUNTER_MAX:
            conn.dead = True
            raise NonceExhausted('connection %d' % conn.conn_id)
        payload = _open(conn.suite, conn.key, counter, data)
        conn.nonce = counter + 1
        callback = self.cb_table[conn.io_id]
        self.host.on_fire(self, callback.label, payload)
        reply = self._invoke(callback.handler, conn.conn_id, payload)
        if callback.kind is EndpointKind.HANDLER and reply is not None:
            sealed = _seal(conn.suite, conn.reply_key(), counter, reply)
            conn.reply_nonce = counter + 1
            self.host.publish(self, conn.conn_id, sealed)

    def _invoke(self, function, conn_id, payload, reraise=False):
        """
        Runs a handler or entry atomically. On failure the behavior
        state is restored and buffered outputs are discarded.
        """
        snapshot = self.behavior.snapshot()
        ctx = ModuleContext(self, conn_id)
        was_busy = self._busy
        self._busy = True
        try:
            result = function(ctx, payload)
        except Exception as e:
            self.behavior.restore(snapshot)
            if reraise:
                raise
            logger.info('%s: handler failed, state restored: %s: %s',
                        self.name, e.__class__.__name__, e)
            return None
        finally:
            self._busy = was_busy
        for io_id, output in ctx.outputs:
            for conn_id_out, sealed in self.handle_output(io_id, output):
                self.host.publish(self, conn_id_out, sealed)
        if result is None:
            return b''
        return bytes(result)

    def _drain_backlog(self):
        while self._backlog and not self._busy:
            conn_id, data = self._backlog.popleft()
            self.handle_input(conn_id, data)

    def _receive_reply(self, conn, data):
        pending = self._pending.get(conn.conn_id)
        if pending is None or pending.done:
            raise AuthFailure('unexpected reply on %d' % conn.conn_id)
        try:
            pending.reply = _open(conn.suite, conn.reply_key(),
                                  pending.counter, data)
        except AuthFailure as e:
            pending.error = e
        pending.done = True
        self.host.notify()


def _seal(suite, key, counter, payload):
    ciphertext, tag = aead_seal(suite, key, make_nonce(counter), payload,
                                counter_aad(counter))
    return ciphertext + tag


def _open(suite, key, counter, data):
    if len(data) < TAG_SIZE:
        raise AuthFailure('event shorter than a tag')
    return aead_open(suite, key, make_nonce(counter), data[:-TAG_SIZE],
                     data[-TAG_SIZE:], counter_aad(counter))


def build_module(package, module_key, host=None, module_id=0, identity=None):
    """
    Instantiates the behavior named by `package` as a security module.

    **Parameters**

    package : ModulePackage or bytes

    module_key : bytes

    **Returns**

    module : SecurityModule
        empty connection table, callback table from the behavior
    """
    if not isinstance(package, ModulePackage):
        package = ModulePackage.parse(package)
    behavior_cls = behaviors.lookup(package.name)
    behavior = behavior_cls(package.init)
    cb_table = make_callback_table(package, behavior)
    return SecurityModule(package, module_key, behavior, cb_table, host=host,
                          module_id=module_id, identity=identity)
