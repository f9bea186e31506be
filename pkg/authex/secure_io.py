# -*- coding: utf-8 -*-
import json
import struct
import threading
from collections import namedtuple

from authex.behaviors import Behavior, register
from authex.crypto_core import (KEY_SIZE, TAG_SIZE, CipherSuite, aead_seal,
                                check_key, key_fingerprint, mac_tag,
                                make_nonce, verify_tag)
from authex.enclave_runtime import ENTRY_HANDLE_INPUT
from authex.errors import (AuthFailure, CallerRejected, ConfigError,
                           LeaseError, LeaseHeld, NonceMismatch,
                           ReleaseRejected, UnknownDevice, UnknownDriver)
from authex.log_utils import init_logging
from authex.parameters_utils import set_parameters
from authex.tee_sim import (CALLER_BOOT, CALLER_RESERVED, PROVIDER_VENDOR_ID,
                            Flavor, KeyHierarchy, VerificationService,
                            placement_identity)


"""
This module contains protected drivers and simulated devices.

Every device is served by a driver module and an MMIO module loaded at
boot under the provider's vendor id. The MMIO module only answers its
driver; the driver only accepts application connections granted by the
infrastructure provider:

    1. deployer reads the driver's current nonce
    2. provider seals the connection key for that nonce
    3. driver opens the grant, installs the connection, answers with a
       confirmation tag and draws a new nonce
"""

logger = init_logging('secure_io')

NONCE_BYTES = 16
FLAG_EXCLUSIVE = 0x01
CONFIRM_LABEL = b'CONFIRM'
RELEASE_LABEL = b'RELEASE'
VALUE_REGISTER = 0
ATTRIBUTION_SIZE = 16

# driver entry points
ENTRY_GET_NONCE = 3
ENTRY_SET_EXCLUSIVE = 4
ENTRY_RELEASE = 5
ENTRY_INTERRUPT = 6
ENTRY_BOOT = 7

# mmio entry points
ENTRY_MMIO_READ = 3
ENTRY_MMIO_WRITE = 4

GRANT_ARGS_SIZE = 2 + NONCE_BYTES + 1 + KEY_SIZE + TAG_SIZE
RELEASE_ARGS_SIZE = 2 + 2 + TAG_SIZE

INPUT = 'input'
OUTPUT = 'output'

DriverBinding = namedtuple('DriverBinding', ['device_id', 'kind',
                                             'driver_id', 'mmio_id', 'irq'])

PhysicalRecord = namedtuple('PhysicalRecord', ['ts', 'device_id',
                                               'direction', 'value',
                                               'attribution'])


class SimDevice(object):
    """
    A simulated physical device with 16-bit addressed registers and an
    append-only physical log.

    **Parameters**

    device_id : str

    kind : str
        'input' (button, sensor, timer) or 'output' (LED, tap, display)
    """

    def __init__(self, device_id, kind):
        if kind not in (INPUT, OUTPUT):
            raise ConfigError('device %s has unknown kind %r'
                              % (device_id, kind))
        self.device_id = device_id
        self.kind = kind
        self.registers = {}
        self.log = []
        self._lock = threading.Lock()

    def __repr__(self):
        return 'SimDevice(%s, %s, records=%d)' % (self.device_id, self.kind,
                                                  len(self.log))

    @property
    def value(self):
        return self.registers.get(VALUE_REGISTER)

    def latch(self, value, ts):
        """A physical input event: the value appears in the register."""
        if self.kind != INPUT:
            raise UnknownDevice('%s is not an input device' % self.device_id)
        with self._lock:
            self.registers[VALUE_REGISTER] = bytes(value)
            self.log.append(PhysicalRecord(ts, self.device_id, INPUT,
                                           bytes(value), 'physical'))

    def read(self, register=VALUE_REGISTER):
        return self.registers.get(register, b'')

    def write(self, register, value, attribution, ts):
        if self.kind != OUTPUT:
            raise UnknownDevice('%s is not an output device'
                                % self.device_id)
        with self._lock:
            self.registers[register] = bytes(value)
            self.log.append(PhysicalRecord(ts, self.device_id, OUTPUT,
                                           bytes(value), attribution))

    def inputs(self):
        return [r for r in self.log if r.direction == INPUT]

    def actuations(self):
        return [r for r in self.log if r.direction == OUTPUT]

    def export_lines(self):
        return [format_record(r) for r in self.log]


def format_record(record):
    return '%.6f, %s, %s, %s, %s' % (record.ts, record.device_id,
                                     record.direction, record.value.hex(),
                                     record.attribution)


def parse_record(line):
    ts, device_id, direction, value, attribution = \
        [part.strip() for part in line.split(',', 4)]
    return PhysicalRecord(float(ts), device_id, direction,
                          bytes.fromhex(value), attribution)


#
# driver and mmio behaviors
#

class DriverBehavior(Behavior):
    """
    Common part of the input and output drivers. `state['grants']`
    maps connection ids to the granted key, the access mode and the
    release counter of that grant.
    """

    entries = ('get_nonce', 'set_exclusive', 'release', 'interrupt', 'boot')
    app_label = None

    def initial_state(self, init):
        config = json.loads(init.decode('utf-8'))
        return {
            'device': config['device'],
            'mmio': config['mmio'],
            'nonce': None,
            'grants': {},
        }

    def entry_boot(self, ctx, args):
        if ctx.caller_id != CALLER_BOOT:
            raise CallerRejected('boot entry called by %d' % ctx.caller_id)
        self.state['nonce'] = ctx.random_bytes(NONCE_BYTES).hex()
        self.state['grants'] = {}
        return b''

    def entry_get_nonce(self, ctx, args):
        return bytes.fromhex(self.state['nonce'])

    def entry_set_exclusive(self, ctx, args):
        """
        args: conn_id(2) | nonce(16) | flags(1) | sealed conn key(32)

        **Returns**

        confirmation : bytes
            mac_tag(conn_key, 'CONFIRM' | nonce)
        """
        if len(args) != GRANT_ARGS_SIZE:
            raise LeaseError('grant must be %d bytes' % GRANT_ARGS_SIZE)
        conn_id = struct.unpack('>H', args[:2])[0]
        nonce = args[2:2 + NONCE_BYTES]
        flags = args[2 + NONCE_BYTES:3 + NONCE_BYTES]
        blob = args[3 + NONCE_BYTES:]
        conn_key = ctx.open_sealed(make_nonce(0), blob[:KEY_SIZE],
                                   blob[KEY_SIZE:], nonce + flags)
        if nonce != bytes.fromhex(self.state['nonce']):
            raise NonceMismatch('grant for a previous nonce')
        exclusive = bool(flags[0] & FLAG_EXCLUSIVE)
        self.check_access(exclusive)
        if exclusive:
            ctx.clear_connections()
            self.state['grants'] = {}
        ctx.install_connection(conn_id, self.app_label, conn_key)
        self.state['grants'][str(conn_id)] = {
            'key': conn_key.hex(),
            'exclusive': exclusive,
            'release_seq': 0,
        }
        self.state['nonce'] = ctx.random_bytes(NONCE_BYTES).hex()
        logger.debug('%s: connection %d granted (%s)', self.state['device'],
                     conn_id, 'exclusive' if exclusive else 'shared')
        return mac_tag(conn_key, CONFIRM_LABEL + nonce)

    def entry_release(self, ctx, args):
        """args: conn_id(2) | seq(2) | mac_tag(key, 'RELEASE' | header)"""
        if len(args) != RELEASE_ARGS_SIZE:
            raise ReleaseRejected('release must be %d bytes'
                                  % RELEASE_ARGS_SIZE)
        conn_id, seq = struct.unpack('>HH', args[:4])
        grant = self.state['grants'].get(str(conn_id))
        if grant is None:
            raise ReleaseRejected('connection %d holds no grant' % conn_id)
        key = bytes.fromhex(grant['key'])
        if not verify_tag(key, RELEASE_LABEL + args[:4], args[4:]):
            raise AuthFailure('release tag does not verify')
        if seq != grant['release_seq']:
            raise ReleaseRejected('release counter %d, expected %d'
                                  % (seq, grant['release_seq']))
        del self.state['grants'][str(conn_id)]
        ctx.remove_connection(conn_id)
        self.state['nonce'] = ctx.random_bytes(NONCE_BYTES).hex()
        return b''

    def entry_interrupt(self, ctx, args):
        return b''

    def check_access(self, exclusive):
        if not exclusive and self.exclusive_holder() is not None:
            raise LeaseHeld('%s is held exclusively' % self.state['device'])

    def exclusive_holder(self):
        for conn_id, grant in self.state['grants'].items():
            if grant['exclusive']:
                return int(conn_id)
        return None

    def _check_interrupt(self, ctx):
        if not CALLER_RESERVED <= ctx.caller_id < CALLER_BOOT:
            raise CallerRejected('interrupt raised by %d' % ctx.caller_id)


@register('InputDriver')
class InputDriver(DriverBehavior):
    """Seals each latched value to every granted connection."""

    outputs = ('Value',)
    app_label = 'Value'

    def entry_interrupt(self, ctx, args):
        self._check_interrupt(ctx)
        value = ctx.call(self.state['mmio'], ENTRY_MMIO_READ,
                         struct.pack('>H', VALUE_REGISTER))
        ctx.output('Value', value)
        return b''


@register('OutputDriver')
class OutputDriver(DriverBehavior):
    """Writes the payload of each authentic event to the device."""

    inputs = ('Actuate',)
    app_label = 'Actuate'

    def check_access(self, exclusive):
        if not exclusive:
            raise LeaseError('output devices are granted exclusively')

    def on_Actuate(self, ctx, payload):
        grant = self.state['grants'].get(str(ctx.conn_id))
        if grant is None:
            raise LeaseError('connection %d holds no grant' % ctx.conn_id)
        attribution = key_fingerprint(bytes.fromhex(grant['key']))
        ctx.call(self.state['mmio'], ENTRY_MMIO_WRITE,
                 struct.pack('>H', VALUE_REGISTER)
                 + attribution.encode('ascii') + bytes(payload))


@register('Mmio')
class Mmio(Behavior):
    """Register access, answering only the driver id fixed at boot."""

    entries = ('read', 'write')

    def initial_state(self, init):
        config = json.loads(init.decode('utf-8'))
        return {'device': config['device'], 'driver': config['driver']}

    def entry_read(self, ctx, args):
        self._check_caller(ctx)
        register = struct.unpack('>H', args[:2])[0]
        return ctx.mmio_device().read(register)

    def entry_write(self, ctx, args):
        self._check_caller(ctx)
        register = struct.unpack('>H', args[:2])[0]
        attribution = args[2:2 + ATTRIBUTION_SIZE].decode('ascii', 'replace')
        ctx.mmio_device().write(register, args[2 + ATTRIBUTION_SIZE:],
                                attribution, ctx.now())
        return b''

    def _check_caller(self, ctx):
        if ctx.caller_id != self.state['driver']:
            raise CallerRejected('%s answers module %d only, not %d'
                                 % (self.state['device'],
                                    self.state['driver'], ctx.caller_id))


#
# boot
#

def driver_layout(config):
    """
    Module ids of every device's driver pair. Drivers load first, in
    device order, so the ids are fixed by the node configuration.
    """
    layout = []
    for index, (device_id, kind) in enumerate(config.devices):
        layout.append(DriverBinding(device_id, kind, 2 * index + 1,
                                    2 * index + 2, index))
    return layout


def driver_packages(binding):
    """
    **Returns**

    (driver, mmio) : (ModulePackage, ModulePackage)
    """
    driver_cls = InputDriver if binding.kind == INPUT else OutputDriver
    driver_init = json.dumps({'device': binding.device_id,
                              'mmio': binding.mmio_id}, sort_keys=True)
    mmio_init = json.dumps({'device': binding.device_id,
                            'driver': binding.driver_id}, sort_keys=True)
    driver = driver_cls.package(driver_cls.__name__, PROVIDER_VENDOR_ID,
                                driver_init.encode('utf-8'))
    mmio = Mmio.package('Mmio', PROVIDER_VENDOR_ID,
                        mmio_init.encode('utf-8'))
    return driver, mmio


def boot_drivers(node):
    """
    Loads the driver pair of every configured device and draws the
    drivers' first nonces.

    **Returns**

    bindings : dict
        device_id -> DriverBinding
    """
    bindings = {}
    for binding in driver_layout(node.config):
        device = node.devices.get(binding.device_id)
        if device is None:
            device = node.devices[binding.device_id] = \
                SimDevice(binding.device_id, binding.kind)
        driver, mmio = driver_packages(binding)
        driver_id = node.load_boot_module(driver)
        mmio_id = node.load_boot_module(mmio, mmio_device=device)
        if (driver_id, mmio_id) != (binding.driver_id, binding.mmio_id):
            raise ConfigError('drivers of %s loaded as %d/%d'
                              % (binding.device_id, driver_id, mmio_id))
        node.call_with_caller_id(CALLER_BOOT, driver_id, ENTRY_BOOT)
        bindings[binding.device_id] = binding
    return bindings


#
# infrastructure provider
#

class Lease(object):

    __slots__ = ('deployer_id', 'node_id', 'device_id', 'exclusive',
                 'granted_at', 'expires_at', 'fingerprint')

    def __init__(self, deployer_id, node_id, device_id, exclusive,
                 granted_at, expires_at):
        self.deployer_id = deployer_id
        self.node_id = node_id
        self.device_id = device_id
        self.exclusive = exclusive
        self.granted_at = granted_at
        self.expires_at = expires_at
        self.fingerprint = None

    def active(self, now):
        return now < self.expires_at

    def to_dict(self):
        return dict((name, getattr(self, name)) for name in self.__slots__)

    def __repr__(self):
        return 'Lease(%s on %s/%s, %s, until %.3f)' % (
            self.deployer_id, self.node_id, self.device_id,
            'exclusive' if self.exclusive else 'shared', self.expires_at)


class InfrastructureProvider(object):
    """
    Owner of the nodes and their drivers. Knows every node root, seals
    connection keys for drivers and keeps the lease book.

    **Parameters**

    clock : callable or None
        current (simulated) time

    params : dict, optional
        'lease_time' : float
            lease duration T in seconds
    """

    default_params = {
        'lease_time': 3600.0,
    }

    def __init__(self, clock=None, params={}):
        set_parameters(self, self.default_params, params)
        self.clock = clock
        self.configs = {}
        self.leases = {}
        self.verifier = VerificationService()
        self._grants = {}
        self._lock = threading.RLock()

    def __repr__(self):
        info = ''.join(self.__class__.__name__) + '\n'
        for key in sorted(self.leases):
            info += '%s/%s : %s\n' % (key[0], key[1],
                                      sorted(self.leases[key]))
        return info

    def now(self):
        return self.clock() if self.clock is not None else 0.0

    def add_node(self, config):
        self.configs[config.node_id] = config
        if config.flavor is Flavor.SGX:
            self.verifier.register_platform(config.node_id, config.root_key)

    def node_config(self, node_id):
        try:
            return self.configs[node_id]
        except KeyError:
            raise ConfigError('provider has no node %s' % node_id)

    def key_hierarchy(self, node_id):
        config = self.node_config(node_id)
        return KeyHierarchy(config.root_key, config.flavor,
                            config.vendor_registry)

    def vendor_key(self, node_id, vendor_id):
        """Handed to module vendors for sancus and trustzone nodes."""
        return self.key_hierarchy(node_id).vendor_key(vendor_id)

    def binding(self, node_id, device_id):
        for binding in driver_layout(self.node_config(node_id)):
            if binding.device_id == device_id:
                return binding
        raise UnknownDriver('no driver for %s on %s' % (device_id, node_id))

    def driver_key(self, node_id, device_id):
        binding = self.binding(node_id, device_id)
        driver, _ = driver_packages(binding)
        if self.node_config(node_id).measure_placement:
            identity = placement_identity(driver.encode(), binding.driver_id)
        else:
            identity = driver.identity()
        return self.key_hierarchy(node_id).module_key(PROVIDER_VENDOR_ID,
                                                      identity)

    def active_leases(self, node_id, device_id):
        with self._lock:
            self.expire()
            return list(self.leases.get((node_id, device_id), {}).values())

    def acquire_lease(self, deployer_id, node_id, device_id, exclusive=True):
        """
        Phase one of a deployment: reserve the driver. The same deployer
        may renew its own lease.
        """
        binding = self.binding(node_id, device_id)
        if binding.kind == OUTPUT and not exclusive:
            raise LeaseError('output devices are leased exclusively')
        now = self.now()
        with self._lock:
            self.expire()
            held = self.leases.setdefault((node_id, device_id), {})
            for other in held.values():
                if other.deployer_id == deployer_id:
                    continue
                if other.exclusive or exclusive:
                    raise LeaseHeld('%s/%s is leased by %s'
                                    % (node_id, device_id, other.deployer_id))
            lease = Lease(deployer_id, node_id, device_id, exclusive, now,
                          now + self.lease_time)
            previous = held.get(deployer_id)
            if previous is not None:
                lease.fingerprint = previous.fingerprint
            held[deployer_id] = lease
        logger.info('lease of %s/%s to %s until %.3f', node_id, device_id,
                    deployer_id, lease.expires_at)
        return lease

    def grant_exclusive(self, deployer_id, node_id, device_id, nonce,
                        conn_key, exclusive=True):
        """
        Seals `conn_key` for the driver's current `nonce`.

        **Returns**

        blob : bytes
            16-byte ciphertext | 16-byte tag
        """
        conn_key = check_key(conn_key)
        nonce = bytes(nonce)
        if len(nonce) != NONCE_BYTES:
            raise LeaseError('driver nonces are %d bytes' % NONCE_BYTES)
        with self._lock:
            lease = self.acquire_lease(deployer_id, node_id, device_id,
                                       exclusive)
            cached = self._grants.get((node_id, device_id, nonce))
            if cached is not None:
                if cached[:3] == (deployer_id, conn_key, exclusive):
                    return cached[3]
                raise LeaseError('a grant for this nonce was already issued')
            flags = bytes([FLAG_EXCLUSIVE if exclusive else 0])
            key = self.driver_key(node_id, device_id)
            ciphertext, tag = aead_seal(CipherSuite.AES_GCM_128, key,
                                        make_nonce(0), conn_key,
                                        nonce + flags)
            blob = ciphertext + tag
            self._grants[(node_id, device_id, nonce)] = (deployer_id,
                                                         conn_key, exclusive,
                                                         blob)
            lease.fingerprint = key_fingerprint(conn_key)
        return blob

    def close_lease(self, deployer_id, node_id, device_id):
        with self._lock:
            held = self.leases.get((node_id, device_id), {})
            if deployer_id not in held:
                raise LeaseError('%s holds no lease on %s/%s'
                                 % (deployer_id, node_id, device_id))
            del held[deployer_id]
        logger.info('lease of %s/%s by %s closed', node_id, device_id,
                    deployer_id)

    def expire(self):
        """
        Ends leases whose time is up. The driver keeps its owner key
        until an explicit release.
        """
        now = self.now()
        with self._lock:
            for (node_id, device_id), held in self.leases.items():
                for deployer_id in [d for d, lease in held.items()
                                    if not lease.active(now)]:
                    del held[deployer_id]
                    logger.info('lease of %s/%s by %s expired', node_id,
                                device_id, deployer_id)


#
# protocol steps
#

def driver_get_nonce(target, driver_id):
    """
    **Parameters**

    target : Node or event_manager.ManagerClient
        anything exposing call_entry(module_id, entry, args)
    """
    return target.call_entry(driver_id, ENTRY_GET_NONCE)


def provider_grant_exclusive(provider, deployer_id, node_id, device_id,
                             nonce, conn_key, exclusive=True):
    return provider.grant_exclusive(deployer_id, node_id, device_id, nonce,
                                    conn_key, exclusive)


def grant_args(conn_id, nonce, blob, exclusive=True):
    flags = bytes([FLAG_EXCLUSIVE if exclusive else 0])
    return struct.pack('>H', conn_id) + bytes(nonce) + flags + bytes(blob)


def driver_set_exclusive(target, driver_id, conn_id, nonce, blob,
                         exclusive=True):
    """**Returns** the driver's confirmation tag."""
    return target.call_entry(driver_id, ENTRY_SET_EXCLUSIVE,
                             grant_args(conn_id, nonce, blob, exclusive))


def verify_confirmation(conn_key, nonce, confirmation):
    return verify_tag(conn_key, CONFIRM_LABEL + bytes(nonce), confirmation)


def release_args(conn_key, conn_id, seq=0):
    header = struct.pack('>HH', conn_id, seq)
    return header + mac_tag(conn_key, RELEASE_LABEL + header)


def driver_release(target, driver_id, conn_id, conn_key, seq=0,
                   provider=None, lease=None):
    """
    Releases a grant on the driver, then closes the provider lease
    given as (deployer_id, node_id, device_id).
    """
    target.call_entry(driver_id, ENTRY_RELEASE,
                      release_args(conn_key, conn_id, seq))
    if provider is not None and lease is not None:
        provider.close_lease(*lease)


def inject_physical_input(node, device_id, value):
    """
    A physical input event: latches `value` into the device and raises
    the driver's interrupt.
    """
    binding = node.bindings.get(device_id)
    if binding is None:
        raise UnknownDevice('no device %s on %s' % (device_id, node.node_id))
    device = node.devices[device_id]
    if binding.kind != INPUT:
        raise UnknownDevice('%s is not an input device' % device_id)
    device.latch(value, node.now())
    node.call_with_caller_id(CALLER_RESERVED + binding.irq,
                             binding.driver_id, ENTRY_INTERRUPT)


def actuate_output(target, driver_id, conn_id, sealed):
    """Delivers a sealed event to an output driver; failures are dropped."""
    target.call_entry(driver_id, ENTRY_HANDLE_INPUT,
                      struct.pack('>H', conn_id) + bytes(sealed))


def mmio_access(node, device_id, caller, register, op, value=b'',
                attribution=''):
    """
    Register access on behalf of `caller`; op is 'read' or 'write'.
    """
    binding = node.bindings.get(device_id)
    if binding is None:
        raise UnknownDevice('no device %s on %s' % (device_id, node.node_id))
    args = struct.pack('>H', register)
    if op == 'read':
        return node.call_with_caller_id(caller, binding.mmio_id,
                                        ENTRY_MMIO_READ, args)
    if op == 'write':
        label = attribution.encode('ascii')[:ATTRIBUTION_SIZE]
        label = label.ljust(ATTRIBUTION_SIZE, b' ')
        return node.call_with_caller_id(caller, binding.mmio_id,
                                        ENTRY_MMIO_WRITE,
                                        args + label + bytes(value))
    raise ValueError('op must be read or write, not %r' % (op,))


def export_physical_log(nodes):
    """Records of every device of `nodes`, ordered by time."""
    records = []
    for node in nodes:
        for device_id in sorted(node.devices):
            records.extend(node.devices[device_id].log)
    records.sort(key=lambda r: r.ts)
    return [format_record(r) for r in records]
