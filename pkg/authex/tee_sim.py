# -*- coding: utf-8 -*-
import configparser
import enum
import struct
import threading

from authex import profiling
from authex.crypto_core import (KEY_SIZE, RandomSource, check_key, kdf128,
                                mac_tag, sha256, verify_tag)
from authex.enclave_runtime import (DEFAULT_REQUEST_TIMEOUT, ENTRY_ATTEST,
                                    MIN_CHALLENGE, build_module)
from authex.errors import (AuthFailure, CallerRejected, CapacityExceeded,
                           ChallengeTooShort, ConfigError, NodeUnreachable,
                           UnknownModule, UnknownVendor)
from authex.log_utils import init_logging
from authex.module_package import ModulePackage
from authex.parameters_utils import (check_u16, parse_address, parse_bool,
                                     parse_hex_key, set_parameters)


"""
This module contains the simulated TEE nodes: per-flavor key
hierarchies, module loading with identity measurement, attestation
evidence, and caller-identity tracking for cross-module calls.
"""

logger = init_logging('tee_sim')

CALLER_EXTERNAL = 0
CALLER_RESERVED = 0xFF00
CALLER_BOOT = 0xFFFE
PROVIDER_VENDOR_ID = 0xFFFF
QUOTE_LABEL = b'QUOTE'
IDENTITY_SIZE = 32


class Flavor(enum.Enum):
    SANCUS = 'sancus'
    TRUSTZONE = 'trustzone'
    SGX = 'sgx-sim'

    @classmethod
    def parse(cls, value):
        if isinstance(value, Flavor):
            return value
        text = str(value).strip().lower()
        if text == 'sgx':
            text = 'sgx-sim'
        try:
            return cls(text)
        except ValueError:
            raise ConfigError('unknown TEE flavor %r' % (value,))


def derive_vendor_key(root, vendor_id, registry=None):
    """
    kdf128(root, vendor_id as 2 big-endian bytes).

    **Parameters**

    root : bytes
        node key, HUK or platform master key

    vendor_id : int

    registry : container or None
        when given, vendor_id must be registered in it
    """
    if registry is not None and vendor_id not in registry:
        raise UnknownVendor('vendor %d is not registered' % vendor_id)
    return kdf128(root, struct.pack('>H', vendor_id))


def derive_module_key(vendor_key, identity):
    return kdf128(vendor_key, identity)


def placement_identity(package_bytes, module_id):
    """Identity including the load slot, for nodes measuring placement."""
    return sha256(bytes(package_bytes) + b'@' + struct.pack('>H', module_id))


class KeyHierarchy(object):
    """
    root -> vendor key -> module key for sancus and trustzone nodes;
    root -> module key for sgx-sim nodes, whose evidence is a quote
    under kdf128(root, 'QUOTE').
    """

    def __init__(self, root, flavor, vendor_registry=()):
        self._root = check_key(root)
        self.flavor = Flavor.parse(flavor)
        self.vendor_registry = set(vendor_registry)

    def vendor_key(self, vendor_id):
        return derive_vendor_key(self._root, vendor_id, self.vendor_registry)

    def module_key(self, vendor_id, identity):
        if self.flavor is Flavor.SGX:
            if vendor_id not in self.vendor_registry:
                raise UnknownVendor('vendor %d is not registered'
                                    % vendor_id)
            return kdf128(self._root, identity)
        return derive_module_key(self.vendor_key(vendor_id), identity)

    def quoting_key(self):
        return kdf128(self._root, QUOTE_LABEL)


class NodeConfig(object):
    """
    Static description of a node.

    **Parameters**

    node_id : str

    address : str
        host:port of the node's event manager

    flavor : Flavor or str
        'sancus', 'trustzone' or 'sgx-sim'

    root_key : bytes
        16 bytes, known to the node and to the infrastructure provider

    vendor_registry : iterable of int
        granted vendor ids

    devices : list of (device_id, 'input' | 'output')

    max_modules : int

    measure_placement : bool
        fold the load slot into module identities
    """

    def __init__(self, node_id, address, flavor, root_key,
                 vendor_registry=(), devices=(), max_modules=32,
                 measure_placement=False):
        self.node_id = node_id
        self.address = address
        self.flavor = Flavor.parse(flavor)
        self.root_key = check_key(root_key)
        self.vendor_registry = set(vendor_registry)
        self.vendor_registry.add(PROVIDER_VENDOR_ID)
        self.devices = [(d, k) for d, k in devices]
        self.max_modules = max_modules
        self.measure_placement = measure_placement
        self.validate()

    def validate(self):
        if not self.node_id:
            raise ConfigError('node_id is empty')
        parse_address(self.address)
        for vendor_id in self.vendor_registry:
            check_u16(vendor_id, 'vendor_id')
        seen = set()
        for device_id, kind in self.devices:
            if kind not in ('input', 'output'):
                raise ConfigError('device %s has unknown kind %r'
                                  % (device_id, kind))
            if device_id in seen:
                raise ConfigError('device %s declared twice' % device_id)
            seen.add(device_id)
        if self.max_modules < 1:
            raise ConfigError('max_modules must be positive')

    def __repr__(self):
        # root key omitted
        return 'NodeConfig(%s, %s, %s, devices=%s)' % (
            self.node_id, self.address, self.flavor.value,
            [d for d, _ in self.devices])


def parse_node_config(text):
    """
    Reads an INI document with [node], [vendors] and [devices] sections.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError('bad node configuration: %s' % e)
    if not parser.has_section('node'):
        raise ConfigError('missing [node] section')
    node = parser['node']
    try:
        node_id = node['node_id']
        address = node['address']
        flavor = node['flavor']
        root_key = parse_hex_key(node['root_key'], 'root_key')
    except KeyError as e:
        raise ConfigError('missing key %s in [node]' % e)
    vendors = []
    if parser.has_section('vendors'):
        for vendor_id, value in parser.items('vendors'):
            try:
                granted = (value.strip().lower() == 'granted'
                           or parse_bool(value))
                vendor = int(vendor_id, 0)
            except ValueError:
                raise ConfigError('bad vendor id %r' % vendor_id)
            if granted:
                vendors.append(vendor)
    devices = []
    if parser.has_section('devices'):
        devices = list(parser.items('devices'))
    try:
        max_modules = int(node.get('max_modules', '32'))
    except ValueError:
        raise ConfigError('max_modules must be an integer')
    measure = parse_bool(node.get('measure_placement', 'no'))
    return NodeConfig(node_id, address, flavor, root_key, vendors, devices,
                      max_modules, measure)


def load_node_config(path):
    with open(path) as f:
        return parse_node_config(f.read())


class Node(object):
    """
    One simulated TEE node. The node acts as the host of its modules:
    it publishes their output events through the attached event manager
    and tracks the identifier of the calling module.

    **Parameters**

    config : NodeConfig

    clock : callable or None
        returns the current (simulated) time

    params : dict, optional
        'seed' : int
            seeds the node's random source (driver nonces)
        'request_timeout' : float
            default timeout of module requests
    """

    default_params = {
        'seed': None,
        'request_timeout': DEFAULT_REQUEST_TIMEOUT,
    }

    def __init__(self, config, clock=None, params={}):
        set_parameters(self, self.default_params, params)
        self.config = config
        self.keys = KeyHierarchy(config.root_key, config.flavor,
                                 config.vendor_registry)
        self.random = RandomSource(self.seed)
        self.clock = clock
        self.epoch = 0
        self.modules = {}
        self.manager = None
        self.network = None
        self.fire_hooks = []
        self.bindings = {}
        # physical devices outlive resets
        self.devices = {}
        self._mmio = {}
        self._boot_ids = set()
        self._next_id = 1
        self._lock = threading.RLock()
        self._callers = threading.local()
        self.boot()

    @property
    def node_id(self):
        return self.config.node_id

    @property
    def flavor(self):
        return self.config.flavor

    def __repr__(self):
        return 'Node(%s, %s, epoch=%d, modules=%s)' % (
            self.node_id, self.flavor.value, self.epoch, sorted(self.modules))

    def attach(self, manager, network=None):
        self.manager = manager
        self.network = network

    def boot(self):
        """Loads the driver/mmio pair of every configured device."""
        from authex import secure_io
        self.bindings = secure_io.boot_drivers(self)

    def reset(self):
        """
        Clears every module, bumps the epoch and reboots the drivers with
        fresh nonces. The root key survives.
        """
        with self._lock:
            self.modules.clear()
            self._mmio.clear()
            self._boot_ids.clear()
            self._next_id = 1
            self.epoch += 1
            self.boot()
        if self.manager is not None:
            self.manager.on_reset()
        logger.info('%s reset, epoch %d', self.node_id, self.epoch)

    #
    # module management
    #

    def load_module(self, package_bytes):
        """
        **Returns**

        (module_id, identity) : (int, bytes)
        """
        package = ModulePackage.parse(package_bytes)
        with self._lock:
            if len(self.modules) - len(self._boot_ids) >= \
                    self.config.max_modules:
                raise CapacityExceeded('%s holds %d modules already'
                                       % (self.node_id,
                                          self.config.max_modules))
            module_id, identity = self._install(package)
        logger.info('%s loaded %s as %d', self.node_id, package.name,
                    module_id)
        return module_id, identity

    def load_boot_module(self, package, mmio_device=None):
        with self._lock:
            module_id, _ = self._install(package)
            self._boot_ids.add(module_id)
            if mmio_device is not None:
                self._mmio[module_id] = mmio_device
        return module_id

    def unload_module(self, module_id):
        with self._lock:
            if module_id in self._boot_ids:
                raise CallerRejected('boot module %d cannot be unloaded'
                                     % module_id)
            if module_id not in self.modules:
                raise UnknownModule('no module %d on %s'
                                    % (module_id, self.node_id))
            del self.modules[module_id]
        logger.info('%s unloaded %d', self.node_id, module_id)

    def get_module(self, module_id):
        try:
            return self.modules[module_id]
        except KeyError:
            raise UnknownModule('no module %d on %s'
                                % (module_id, self.node_id))

    def is_boot_module(self, module_id):
        return module_id in self._boot_ids

    def node_attest(self, module_id, challenge):
        """
        **Returns**

        evidence : bytes
            mac_tag(module_key, challenge) on sancus/trustzone nodes;
            identity | challenge | quote tag on sgx-sim nodes
        """
        module = self.get_module(module_id)
        if self.flavor is not Flavor.SGX:
            return module.attest(challenge)
        if len(challenge) < MIN_CHALLENGE:
            raise ChallengeTooShort('challenges are at least %d bytes'
                                    % MIN_CHALLENGE)
        body = module.identity + bytes(challenge)
        return body + mac_tag(self.keys.quoting_key(), body)

    def call_entry(self, module_id, entry, args=b''):
        """Untrusted call, as issued by the event manager."""
        return self.call_with_caller_id(CALLER_EXTERNAL, module_id, entry,
                                        args)

    def call_with_caller_id(self, caller, module_id, entry, args=b''):
        module = self.get_module(module_id)
        stack = self._caller_stack()
        stack.append(caller)
        profiling.count('boundary:%s' % self.flavor.value)
        try:
            if module_id in self._boot_ids:
                with profiling.measure('secure_io'):
                    return self._call_entry(module, entry, args)
            return self._call_entry(module, entry, args)
        finally:
            stack.pop()

    #
    # host services for modules
    #

    def caller_id(self):
        stack = self._caller_stack()
        return stack[-1] if stack else CALLER_EXTERNAL

    def call(self, caller, target, entry, args):
        return self.call_with_caller_id(caller, target, entry, args)

    def publish(self, module, conn_id, sealed):
        if self.manager is None:
            logger.debug('%s: no manager, event on %d dropped',
                         self.node_id, conn_id)
            return
        self.manager.handle_local_event(module.module_id, conn_id, sealed)

    def wait_for(self, predicate, timeout):
        if self.network is None:
            return predicate()
        return self.network.wait_for(predicate, timeout)

    def notify(self):
        if self.network is not None:
            self.network.notify()

    def mmio_device(self, module_id):
        return self._mmio.get(module_id)

    def untrusted_request(self, address, opcode, body):
        if self.network is None:
            raise NodeUnreachable('%s has no network' % self.node_id)
        return self.network.request(address, opcode, body,
                                    src=self.config.address)

    def now(self):
        return self.clock() if self.clock is not None else 0.0

    def on_fire(self, module, label, payload):
        for hook in self.fire_hooks:
            hook(self, module, label, payload)

    #
    # subfunctions
    #

    def _install(self, package):
        module_id = self._next_id
        if self.config.measure_placement:
            identity = placement_identity(package.encode(), module_id)
        else:
            identity = package.identity()
        module_key = self.keys.module_key(package.vendor_id, identity)
        module = build_module(package, module_key, host=self,
                              module_id=module_id, identity=identity)
        self._next_id += 1
        self.modules[module_id] = module
        return module_id, identity

    def _call_entry(self, module, entry, args):
        if entry == ENTRY_ATTEST:
            return self.node_attest(module.module_id, args)
        return module.dispatch_entry(entry, args)

    def _caller_stack(self):
        stack = getattr(self._callers, 'stack', None)
        if stack is None:
            stack = self._callers.stack = []
        return stack


class VerificationService(object):
    """
    Verifier of sgx-sim quotes. It shares each platform's root with the
    node and returns the attested module key on success, standing in for
    the key exchange of a real quote verification.
    """

    def __init__(self):
        self._roots = {}

    def register_platform(self, node_id, root_key):
        self._roots[node_id] = check_key(root_key)

    def verify(self, node_id, evidence, challenge):
        """
        **Returns**

        (identity, module_key) : (bytes, bytes)
        """
        try:
            root = self._roots[node_id]
        except KeyError:
            raise AuthFailure('unknown platform %s' % node_id)
        expected = IDENTITY_SIZE + len(challenge) + KEY_SIZE
        if len(evidence) != expected:
            raise AuthFailure('quote has the wrong size')
        identity = evidence[:IDENTITY_SIZE]
        quoted = evidence[IDENTITY_SIZE:IDENTITY_SIZE + len(challenge)]
        tag = evidence[IDENTITY_SIZE + len(challenge):]
        if quoted != bytes(challenge):
            raise AuthFailure('quote answers another challenge')
        if not verify_tag(kdf128(root, QUOTE_LABEL), identity + quoted, tag):
            raise AuthFailure('quote does not verify')
        return identity, kdf128(root, identity)
