# -*- coding: utf-8 -*-
import json
from collections import OrderedDict

import yaml

from authex import behaviors
from authex.crypto_core import CipherSuite
from authex.errors import (ConfigError, SchemaError, UnknownBehavior,
                           UnsupportedCipher)
from authex.module_package import EndpointKind
from authex.parameters_utils import parse_address
from authex.tee_sim import Flavor


"""
This module contains the deployment descriptor: three sections naming
the nodes, the modules mapped onto them and the connections between
module endpoints, devices and the deployer.

Endpoints are written 'module.label', 'device:<device id>' or
'deployer'. Fields a section does not know are kept as extras and
written back unchanged.
"""

DEPLOYER = 'deployer'
DEVICE_PREFIX = 'device:'

NODE_FIELDS = ('name', 'address', 'flavor', 'devices')
MODULE_FIELDS = ('name', 'node', 'behavior', 'vendor_id', 'init')
CONNECTION_FIELDS = ('name', 'from', 'to', 'encryption', 'direct', 'access')


class EndpointRef(object):
    """
    One side of a connection.

    kind is 'module', 'device' or 'deployer'.
    """

    def __init__(self, kind, module=None, label=None, device=None):
        self.kind = kind
        self.module = module
        self.label = label
        self.device = device

    @classmethod
    def parse(cls, text):
        if not isinstance(text, str) or not text:
            raise ValueError('endpoint must be a non-empty string')
        if text == DEPLOYER:
            return cls(DEPLOYER)
        if text.startswith(DEVICE_PREFIX):
            device = text[len(DEVICE_PREFIX):]
            if not device:
                raise ValueError('empty device id')
            return cls('device', device=device)
        module, dot, label = text.partition('.')
        if not dot or not module or not label:
            raise ValueError('expected module.label, got %r' % text)
        return cls('module', module=module, label=label)

    def __str__(self):
        if self.kind == DEPLOYER:
            return DEPLOYER
        if self.kind == 'device':
            return DEVICE_PREFIX + self.device
        return '%s.%s' % (self.module, self.label)

    def __repr__(self):
        return 'EndpointRef(%s)' % self

    def __eq__(self, other):
        return isinstance(other, EndpointRef) and str(self) == str(other)

    def __hash__(self):
        return hash(str(self))


class NodeSpec(object):

    def __init__(self, name, address, flavor, devices=None, extras=None):
        self.name = name
        self.address = address
        self.flavor = Flavor.parse(flavor)
        self.devices = OrderedDict(devices or ())
        self.extras = dict(extras or {})

    def device_list(self):
        return list(self.devices.items())

    def to_dict(self):
        data = OrderedDict([('name', self.name), ('address', self.address),
                            ('flavor', self.flavor.value)])
        if self.devices:
            data['devices'] = OrderedDict(self.devices)
        data.update(sorted(self.extras.items()))
        return data


class ModuleSpec(object):

    def __init__(self, name, node, behavior, vendor_id, init=b'',
                 extras=None):
        self.name = name
        self.node = node
        self.behavior = behavior
        self.vendor_id = vendor_id
        self.init = bytes(init)
        self.extras = dict(extras or {})

    def behavior_class(self):
        return behaviors.lookup(self.behavior)

    def package(self):
        return self.behavior_class().package(self.behavior, self.vendor_id,
                                             self.init)

    def to_dict(self):
        data = OrderedDict([('name', self.name), ('node', self.node),
                            ('behavior', self.behavior),
                            ('vendor_id', self.vendor_id)])
        if self.init:
            data['init'] = self.init.hex()
        data.update(sorted(self.extras.items()))
        return data


class ConnectionSpec(object):
    """
    A directed connection. `kind` is 'event' for output -> input and
    'request' for request -> handler pairs.
    """

    def __init__(self, name, src, dest, encryption=CipherSuite.AES_GCM_128,
                 direct=False, access=None, kind='event', extras=None):
        self.name = name
        self.src = src
        self.dest = dest
        self.encryption = CipherSuite.from_name(encryption)
        self.direct = direct
        self.access = access
        self.kind = kind
        self.extras = dict(extras or {})

    @property
    def exclusive(self):
        """Access mode asked of the drivers on either side."""
        if self.access is not None:
            return self.access == 'exclusive'
        return self.dest.kind == 'device'

    def endpoints(self):
        return [self.src, self.dest]

    def touches(self, module_name):
        return any(e.kind == 'module' and e.module == module_name
                   for e in self.endpoints())

    def to_dict(self):
        data = OrderedDict([('name', self.name), ('from', str(self.src)),
                            ('to', str(self.dest)),
                            ('encryption', _suite_name(self.encryption))])
        if self.direct:
            data['direct'] = True
        if self.access is not None:
            data['access'] = self.access
        data.update(sorted(self.extras.items()))
        return data


class Descriptor(object):
    """
    A validated deployment descriptor. Sections keep their document
    order.
    """

    def __init__(self, nodes, modules, connections, extras=None):
        self.nodes = OrderedDict((n.name, n) for n in nodes)
        self.modules = OrderedDict((m.name, m) for m in modules)
        self.connections = OrderedDict((c.name, c) for c in connections)
        self.extras = dict(extras or {})

    def __repr__(self):
        return 'Descriptor(nodes=%d, modules=%d, connections=%d)' % (
            len(self.nodes), len(self.modules), len(self.connections))

    def node(self, name):
        try:
            return self.nodes[name]
        except KeyError:
            raise ConfigError('no node %s in the descriptor' % name)

    def module(self, name):
        try:
            return self.modules[name]
        except KeyError:
            raise ConfigError('no module %s in the descriptor' % name)

    def connection(self, name):
        try:
            return self.connections[name]
        except KeyError:
            raise ConfigError('no connection %s in the descriptor' % name)

    def modules_on(self, node_name):
        return [m for m in self.modules.values() if m.node == node_name]

    def connections_of(self, module_name):
        return [c for c in self.connections.values()
                if c.touches(module_name)]

    def device_node(self, device_id):
        for node in self.nodes.values():
            if device_id in node.devices:
                return node
        raise ConfigError('no node declares device %s' % device_id)

    def vendors_on(self, node_name):
        return sorted(set(m.vendor_id for m in self.modules_on(node_name)))

    def to_dict(self):
        data = OrderedDict([
            ('nodes', [n.to_dict() for n in self.nodes.values()]),
            ('modules', [m.to_dict() for m in self.modules.values()]),
            ('connections', [c.to_dict() for c in self.connections.values()]),
        ])
        data.update(sorted(self.extras.items()))
        return data

    def serialize(self, fmt='json'):
        """Text form; parse_descriptor(serialize()) gives an equal result."""
        data = _plain(self.to_dict())
        if fmt == 'json':
            return json.dumps(data, indent=2) + '\n'
        if fmt == 'yaml':
            return yaml.safe_dump(data, default_flow_style=False,
                                  sort_keys=False)
        raise ValueError('unknown descriptor format %r' % (fmt,))


def _plain(value):
    if isinstance(value, dict):
        return dict((k, _plain(v)) for k, v in value.items())
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def _suite_name(suite):
    return {CipherSuite.AES_GCM_128: 'aes',
            CipherSuite.SPONGENT_128: 'spongent'}[suite]


#
# parsing
#

def parse_descriptor(text):
    """
    Reads a descriptor written as JSON or YAML.

    **Returns**

    descriptor : Descriptor

    Raises SchemaError listing every violation found.
    """
    data = _load(text)
    checker = _Checker()
    descriptor = checker.check(data)
    if checker.violations:
        raise SchemaError(checker.violations)
    return descriptor


def load_descriptor(path):
    with open(path) as f:
        return parse_descriptor(f.read())


def _load(text):
    if text.lstrip().startswith('{'):
        try:
            return json.loads(text, object_pairs_hook=OrderedDict)
        except json.JSONDecodeError as e:
            raise SchemaError('line %d column %d: %s' % (e.lineno, e.colno,
                                                         e.msg))
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        if mark is not None:
            raise SchemaError('line %d column %d: %s' % (
                mark.line + 1, mark.column + 1, getattr(e, 'problem', e)))
        raise SchemaError('unreadable descriptor: %s' % e)


class _Checker(object):
    """Collects violations instead of stopping at the first one."""

    def __init__(self):
        self.violations = []

    def fail(self, where, message):
        self.violations.append('%s: %s' % (where, message))

    def check(self, data):
        if not isinstance(data, dict):
            self.fail('descriptor', 'must be a mapping')
            return None
        sections = {}
        for section in ('nodes', 'modules', 'connections'):
            value = data.get(section)
            if value is None:
                self.fail(section, 'section is missing')
                value = []
            elif not isinstance(value, list):
                self.fail(section, 'must be a list')
                value = []
            sections[section] = value
        nodes = self._nodes(sections['nodes'])
        modules = self._modules(sections['modules'], nodes)
        connections = self._connections(sections['connections'], nodes,
                                        modules)
        extras = dict((k, v) for k, v in data.items()
                      if k not in ('nodes', 'modules', 'connections'))
        return Descriptor(nodes.values(), modules.values(), connections,
                          extras)

    def _nodes(self, items):
        nodes = OrderedDict()
        devices = {}
        for i, item in enumerate(items):
            where = 'nodes[%d]' % i
            if not self._mapping(where, item, ('name', 'address', 'flavor')):
                continue
            name = item['name']
            if name in nodes:
                self.fail(where, 'duplicate node name %r' % name)
                continue
            try:
                parse_address(item['address'])
                flavor = Flavor.parse(item['flavor'])
            except ConfigError as e:
                self.fail(where, str(e))
                continue
            node_devices = self._devices('%s.devices' % where,
                                         item.get('devices') or {})
            for device_id in node_devices:
                if device_id in devices:
                    self.fail(where, 'device %r already declared on %s'
                              % (device_id, devices[device_id]))
                devices[device_id] = name
            extras = _extras(item, NODE_FIELDS)
            nodes[name] = NodeSpec(name, item['address'], flavor,
                                   node_devices, extras)
        return nodes

    def _devices(self, where, value):
        if isinstance(value, list):
            pairs = []
            for entry in value:
                if not isinstance(entry, dict) or 'id' not in entry:
                    self.fail(where, 'device entries need an id')
                    continue
                pairs.append((entry['id'], entry.get('kind', 'input')))
        elif isinstance(value, dict):
            pairs = list(value.items())
        else:
            self.fail(where, 'must map device ids to kinds')
            return OrderedDict()
        devices = OrderedDict()
        for device_id, kind in pairs:
            if kind not in ('input', 'output'):
                self.fail(where, 'device %r has unknown kind %r'
                          % (device_id, kind))
                continue
            devices[str(device_id)] = kind
        return devices

    def _modules(self, items, nodes):
        modules = OrderedDict()
        for i, item in enumerate(items):
            where = 'modules[%d]' % i
            if not self._mapping(where, item, ('name', 'node', 'behavior')):
                continue
            name = item['name']
            ok = True
            if name in modules:
                self.fail(where, 'duplicate module name %r' % name)
                continue
            if '.' in name or name == DEPLOYER or \
                    name.startswith(DEVICE_PREFIX):
                self.fail(where, 'reserved module name %r' % name)
                ok = False
            if item['node'] not in nodes:
                self.fail(where, 'unknown node %r' % item['node'])
                ok = False
            try:
                behaviors.lookup(item['behavior'])
            except UnknownBehavior as e:
                self.fail(where, str(e))
                ok = False
            vendor_id = item.get('vendor_id', 1)
            if not isinstance(vendor_id, int) or not 0 <= vendor_id < 0xFFFF:
                self.fail(where, 'vendor_id must be in [0, 65534]')
                ok = False
            try:
                init = bytes.fromhex(item.get('init') or '')
            except (TypeError, ValueError):
                self.fail(where, 'init must be hex encoded')
                ok = False
            if ok:
                modules[name] = ModuleSpec(name, item['node'],
                                           item['behavior'], vendor_id,
                                           init, _extras(item,
                                                         MODULE_FIELDS))
        return modules

    def _connections(self, items, nodes, modules):
        connections = []
        names = set()
        device_kinds = {}
        for node in nodes.values():
            device_kinds.update(node.devices)
        for i, item in enumerate(items):
            where = 'connections[%d]' % i
            if not self._mapping(where, item, ('from', 'to')):
                continue
            name = item.get('name') or '%s->%s' % (item['from'], item['to'])
            if name in names:
                self.fail(where, 'duplicate connection name %r' % name)
                continue
            names.add(name)
            try:
                src = EndpointRef.parse(item['from'])
                dest = EndpointRef.parse(item['to'])
            except ValueError as e:
                self.fail(where, str(e))
                continue
            try:
                encryption = CipherSuite.from_name(item.get('encryption',
                                                            'aes'))
            except UnsupportedCipher as e:
                self.fail(where, str(e))
                continue
            direct = bool(item.get('direct', False))
            access = item.get('access')
            if access not in (None, 'exclusive', 'shared'):
                self.fail(where, 'access must be exclusive or shared')
                continue
            kind = self._pairing(where, src, dest, direct, modules,
                                 device_kinds)
            if kind is None:
                continue
            if access == 'shared' and dest.kind == 'device':
                self.fail(where, 'output devices are leased exclusively')
                continue
            connections.append(ConnectionSpec(
                name, src, dest, encryption, direct, access, kind,
                _extras(item, CONNECTION_FIELDS)))
        return connections

    def _pairing(self, where, src, dest, direct, modules, device_kinds):
        """Kind of the connection, or None after recording a violation."""
        if dest.kind == DEPLOYER:
            self.fail(where, 'the deployer cannot be a destination')
            return None
        if src.kind == DEPLOYER and not direct:
            self.fail(where, 'connections from the deployer must be direct')
            return None
        if src.kind != DEPLOYER and direct:
            self.fail(where, 'only connections from the deployer are direct')
            return None
        if src.kind == 'device' and dest.kind == 'device':
            self.fail(where, 'devices cannot be connected to each other')
            return None
        src_kind = self._endpoint_kind(where, src, modules, device_kinds,
                                       'input')
        dest_kind = self._endpoint_kind(where, dest, modules, device_kinds,
                                        'output')
        if src_kind is None or dest_kind is None:
            return None
        if src_kind in (EndpointKind.OUTPUT, DEPLOYER) and \
                dest_kind is EndpointKind.INPUT:
            return 'event'
        if src_kind in (EndpointKind.REQUEST, DEPLOYER) and \
                dest_kind is EndpointKind.HANDLER:
            return 'request'
        self.fail(where, '%s cannot feed %s' % (src, dest))
        return None

    def _endpoint_kind(self, where, ref, modules, device_kinds, device_kind):
        """
        Endpoint kind as seen by the connection; device endpoints map to
        their driver's output (inputs) or input (outputs).
        """
        if ref.kind == DEPLOYER:
            return DEPLOYER
        if ref.kind == 'device':
            kind = device_kinds.get(ref.device)
            if kind is None:
                self.fail(where, 'unknown device %r' % ref.device)
                return None
            if kind != device_kind:
                self.fail(where, 'device %r is an %s device'
                          % (ref.device, kind))
                return None
            if kind == 'input':
                return EndpointKind.OUTPUT
            return EndpointKind.INPUT
        module = modules.get(ref.module)
        if module is None:
            self.fail(where, 'unknown module %r' % ref.module)
            return None
        declared = dict(module.behavior_class().declared())
        if ref.label not in declared:
            self.fail(where, '%s declares no endpoint %r'
                      % (ref.module, ref.label))
            return None
        return declared[ref.label]

    def _mapping(self, where, item, required):
        if not isinstance(item, dict):
            self.fail(where, 'must be a mapping')
            return False
        missing = [f for f in required if f not in item]
        for field in missing:
            self.fail(where, 'missing field %r' % field)
        return not missing


def _extras(item, known):
    return dict((k, v) for k, v in item.items() if k not in known)
