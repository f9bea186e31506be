# -*- coding: utf-8 -*-
import struct
from collections import namedtuple

import numpy as np

from authex.crypto_core import kdf128, sha256
from authex.deployer import Deployer
from authex.descriptor import DEVICE_PREFIX
from authex.errors import (AuthexError, ConfigError, DeploymentError,
                           SchemaError, ScenarioError, UnknownBehavior)
from authex.event_manager import EventManager
from authex.log_utils import format_fields, init_logging
from authex.network import Frame, VirtualNetwork
from authex.parameters_utils import set_parameters
from authex.secure_io import (OUTPUT, InfrastructureProvider,
                              inject_physical_input)
from authex.tee_sim import Node, NodeConfig
from authex.wire import OP_REMOTE_EVENT, OPCODE_NAMES, encode_remote_event


"""
This module contains the adversarial test rig: in-process nodes on a
virtual network, a seeded attacker rewriting event frames, and the
causal trace of a run.
"""

logger = init_logging('harness')

ACTIONS = ('pass', 'drop', 'duplicate', 'reorder', 'corrupt', 'inject',
           'replay')

# event body header: dest module id, conn id
EVENT_HEADER = 4

ScheduleItem = namedtuple('ScheduleItem', ['time', 'target', 'value'])

AttackRecord = namedtuple('AttackRecord', ['index', 'action', 'frame',
                                           'detail'])

TraceRecord = namedtuple('TraceRecord', ['ts', 'seq', 'kind', 'fields'])


def frame_hash(frame):
    return sha256(frame.body)[:8].hex()


class AttackScript(object):
    """
    Seeded attacker deciding the fate of every event frame.

    **Parameters**

    seed : int

    params : dict, optional
        'weights' : dict
            action -> relative weight
        'max_duplicates' : int
        'reorder_window' : float
            largest extra delay of a reordered frame, in seconds
        'max_corrupt_bits' : int
        'inject_size' : int
            sealed bytes of an injected event
    """

    default_params = {
        'weights': {'pass': 0.5, 'drop': 0.1, 'duplicate': 0.1,
                    'reorder': 0.1, 'corrupt': 0.1, 'inject': 0.05,
                    'replay': 0.05},
        'max_duplicates': 3,
        'reorder_window': 0.05,
        'max_corrupt_bits': 3,
        'inject_size': 17,
    }

    def __init__(self, seed=0, params={}):
        set_parameters(self, self.default_params, params)
        unknown = set(self.weights) - set(ACTIONS)
        if unknown:
            raise ConfigError('unknown attack actions %s' % sorted(unknown))
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.actions = [a for a in ACTIONS if self.weights.get(a, 0) > 0]
        weights = np.array([self.weights[a] for a in self.actions], float)
        self.probabilities = weights / weights.sum()
        self.captures = []
        self.log = []

    @classmethod
    def passthrough(cls):
        return cls(0, {'weights': {'pass': 1.0}})

    @classmethod
    def drop_all(cls):
        return cls(0, {'weights': {'drop': 1.0}})

    def __repr__(self):
        return 'AttackScript(seed=%d, actions=%s)' % (self.seed,
                                                      self.actions)

    def __call__(self, frame, deliveries):
        index = len(self.captures)
        self.captures.append(frame)
        action = self.actions[self.rng.choice(len(self.actions),
                                              p=self.probabilities)]
        deliveries, detail = getattr(self, '_' + action)(frame, deliveries)
        self.log.append(AttackRecord(index, action, frame_hash(frame),
                                     detail))
        return deliveries

    def export_lines(self):
        return [format_fields(index=r.index, action=r.action, frame=r.frame,
                              detail=r.detail) for r in self.log]

    #
    # actions
    #

    def _pass(self, frame, deliveries):
        return deliveries, '-'

    def _drop(self, frame, deliveries):
        return [], '-'

    def _duplicate(self, frame, deliveries):
        k = int(self.rng.integers(1, self.max_duplicates + 1))
        copies = [(delay + 1e-6 * (i + 1), f)
                  for i in range(k) for delay, f in deliveries]
        return deliveries + copies, 'k=%d' % k

    def _reorder(self, frame, deliveries):
        delay = float(self.rng.uniform(0, self.reorder_window))
        return ([(d + delay, f) for d, f in deliveries],
                'delay=%.6f' % delay)

    def _corrupt(self, frame, deliveries):
        body = bytearray(frame.body)
        sealed = len(body) - EVENT_HEADER
        if sealed <= 0:
            return [], 'short'
        n = int(self.rng.integers(1, self.max_corrupt_bits + 1))
        positions = sorted(int(p) for p in
                           self.rng.choice(sealed * 8, size=min(n, sealed * 8),
                                           replace=False))
        for position in positions:
            body[EVENT_HEADER + position // 8] ^= 1 << (position % 8)
        corrupted = Frame(frame.src, frame.dest, frame.opcode, bytes(body))
        return ([(d, corrupted) for d, _ in deliveries],
                'bits=%s' % ','.join(str(p) for p in positions))

    def _inject(self, frame, deliveries):
        dest, conn_id = struct.unpack('>HH', frame.body[:EVENT_HEADER])
        forged = Frame(frame.src, frame.dest, frame.opcode,
                       encode_remote_event(dest, conn_id,
                                           self.rng.bytes(self.inject_size)))
        return [(0.0, forged)] + deliveries, frame_hash(forged)

    def _replay(self, frame, deliveries):
        old = self.captures[int(self.rng.integers(0, len(self.captures)))]
        return deliveries + [(0.0, old)], frame_hash(old)


def replay_frame(network, frame, times=1):
    """Re-sends a captured frame to its original destination."""
    for _ in range(times):
        network.send(frame.dest, frame.opcode, frame.body, src=frame.src)


class HostileNetwork(object):
    """
    Puts an attack script on every event link of a virtual network and
    keeps a capture of every event frame.
    """

    def __init__(self, network, script=None):
        self.network = network
        self.script = script
        self.captured = []
        network.interceptors.append(self.intercept)

    def intercept(self, frame, deliveries):
        if frame.opcode != OP_REMOTE_EVENT:
            return deliveries
        self.captured.append(frame)
        if self.script is None:
            return deliveries
        return self.script(frame, deliveries)


class CausalTrace(object):
    """
    Append-only record of a run: physical and direct inputs, frames,
    handler firings and actuations, stamped with the simulated clock.
    """

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def append(self, ts, kind, **fields):
        self.records.append(TraceRecord(ts, len(self.records), kind, fields))

    def ordered(self):
        return sorted(self.records, key=lambda r: (r.ts, r.seq))

    def of_kind(self, kind):
        return [r for r in self.ordered() if r.kind == kind]

    def inputs(self):
        """(ts, source, value) with source a device id or connection."""
        return [(r.ts, r.fields['source'], r.fields['value'])
                for r in self.of_kind('input')]

    def actuations(self, device=None):
        return [(r.ts, r.fields['device'], r.fields['value'])
                for r in self.of_kind('actuation')
                if device is None or r.fields['device'] == device]

    def fires(self, module=None):
        return [r for r in self.of_kind('fire')
                if module is None or r.fields['module'] == module]

    def frames(self):
        return self.of_kind('frame')

    def export_lines(self):
        return ['ts=%.6f kind=%s %s' % (r.ts, r.kind,
                                        format_fields(**r.fields))
                for r in self.ordered()]

    def without_timestamps(self):
        return [(r.kind, tuple(sorted(r.fields.items())))
                for r in self.ordered()]


class Scenario(object):
    """
    Nodes, event managers, provider and deployer of one descriptor on a
    virtual network.

    **Parameters**

    descriptor : descriptor.Descriptor

    seed : int
        node roots, deployer keys and challenges derive from it

    attack : AttackScript or None

    params : dict, optional
        'latency', 'link_latency', 'max_steps' : see VirtualNetwork
        'lease_time' : float
        'measure_placement' : bool
        'request_timeout' : float
        'deployer_address' : str
        'drain' : float
            time run after the last scheduled input
        'capture_frames' : bool
            trace every frame traversal
    """

    default_params = {
        'latency': 0.001,
        'link_latency': None,
        'max_steps': 10 ** 6,
        'lease_time': 3600.0,
        'measure_placement': False,
        'request_timeout': 0.5,
        'deployer_address': 'deployer:7000',
        'drain': 1.0,
        'capture_frames': True,
    }

    def __init__(self, descriptor, seed=0, attack=None, params={}):
        set_parameters(self, self.default_params, params)
        self.descriptor = descriptor
        self.seed = seed
        self.attack = attack
        self.trace = CausalTrace()
        self.network = VirtualNetwork({'latency': self.latency,
                                       'link_latency': self.link_latency,
                                       'max_steps': self.max_steps})
        self.provider = InfrastructureProvider(
            self.network.now, {'lease_time': self.lease_time})
        self.nodes = {}
        self.managers = {}
        self.hostile = None
        self.deployer = None
        self._names = {}
        self._build_nodes()

    def __repr__(self):
        return 'Scenario(%r, seed=%d)' % (self.descriptor, self.seed)

    def root_key(self, node_name):
        return kdf128(b'authex-root' + struct.pack('>q', self.seed),
                      node_name.encode())

    def node_for_device(self, device_id):
        return self.nodes[self.descriptor.device_node(device_id).name]

    def deploy(self, deployer_params={}):
        """Runs deploy, attest and connect, then arms the attacker."""
        params = {'deployer_id': 'deployer', 'seed': self.seed,
                  'address': self.deployer_address, 'timeout': 1.0}
        params.update(deployer_params)
        self.deployer = Deployer(self.descriptor, self.network,
                                 self.provider, params=params)
        self.deployer.cmd_deploy()
        self.deployer.cmd_attest()
        self.deployer.cmd_connect()
        self._index_modules()
        self.network.run()
        self.hostile = HostileNetwork(self.network, self.attack)
        if self.capture_frames:
            self.network.observers.append(self._on_frame)
        return self.deployer

    def schedule(self, items):
        """Schedules inputs at times relative to now."""
        start = self.network.now()
        last = start
        for item in items:
            item = ScheduleItem(*item)
            when = start + item.time
            last = max(last, when)
            self.network.schedule_at(when, self._apply, item)
        return last

    def run(self, schedule=()):
        last = self.schedule(schedule)
        self.network.run(until=last + self.drain)
        self.network.run()
        self._collect_actuations()
        return self.trace

    def module_name(self, node_id, module_id):
        """Descriptor name of a loaded module, 'driver:<id>' for drivers."""
        return self._names.get((node_id, module_id))

    def physical_log(self):
        lines = []
        for node in self.nodes.values():
            for device_id in sorted(node.devices):
                lines.extend(node.devices[device_id].export_lines())
        return lines

    #
    # subfunctions
    #

    def _build_nodes(self):
        for spec in self.descriptor.nodes.values():
            config = NodeConfig(
                spec.name, spec.address, spec.flavor,
                self.root_key(spec.name),
                self.descriptor.vendors_on(spec.name),
                list(spec.devices.items()),
                max_modules=int(spec.extras.get('max_modules', 32)),
                measure_placement=bool(spec.extras.get(
                    'measure_placement', self.measure_placement)))
            node = Node(config, self.network.now,
                        {'seed': self.seed,
                         'request_timeout': self.request_timeout})
            node.fire_hooks.append(self._on_fire)
            self.nodes[spec.name] = node
            self.managers[spec.name] = EventManager(node, self.network)
            self.provider.add_node(config)

    def _index_modules(self):
        for name, record in self.deployer.state.modules.items():
            self._names[(record['node'], record['module_id'])] = name
        for node in self.nodes.values():
            for device_id, binding in node.bindings.items():
                self._names[(node.node_id, binding.driver_id)] = \
                    'driver:%s' % device_id

    def _apply(self, item):
        value = bytes(item.value)
        self.trace.append(self.network.now(), 'input', source=item.target,
                          value=value)
        try:
            if item.target.startswith(DEVICE_PREFIX):
                device_id = item.target[len(DEVICE_PREFIX):]
                inject_physical_input(self.node_for_device(device_id),
                                      device_id, value)
            else:
                self.deployer.send_direct_event(item.target, value)
        except AuthexError as e:
            logger.info('input %s failed: %s', item.target, e)

    def _on_frame(self, ts, frame):
        self.trace.append(ts, 'frame', src=frame.src, dest=frame.dest,
                          opcode=OPCODE_NAMES.get(frame.opcode,
                                                  frame.opcode),
                          hash=frame_hash(frame))

    def _on_fire(self, node, module, label, payload):
        name = (self.module_name(node.node_id, module.module_id)
                or module.name)
        self.trace.append(self.network.now(), 'fire', node=node.node_id,
                          module=name, label=label, payload=bytes(payload))

    def _collect_actuations(self):
        for node in self.nodes.values():
            for device_id in sorted(node.devices):
                device = node.devices[device_id]
                if device.kind != OUTPUT:
                    continue
                for record in device.actuations():
                    self.trace.append(record.ts, 'actuation',
                                      device=device_id, value=record.value,
                                      attribution=record.attribution)


def run_scenario(descriptor, attack=None, schedule=(), seed=0, params={}):
    """
    Boots the descriptor's nodes in-process, deploys it, injects the
    scheduled inputs through the attacker and returns the trace.

    **Parameters**

    descriptor : descriptor.Descriptor or str
        parsed descriptor or its text

    attack : AttackScript or None

    schedule : iterable of (time, target, value)
        target is 'device:<id>' or the name of a direct connection

    **Returns**

    trace : CausalTrace
    """
    from authex.descriptor import parse_descriptor
    try:
        if isinstance(descriptor, str):
            descriptor = parse_descriptor(descriptor)
        scenario = Scenario(descriptor, seed, attack, params)
        scenario.deploy()
    except (UnknownBehavior, SchemaError, DeploymentError) as e:
        raise ScenarioError('descriptor does not match the behaviors: %s'
                            % e)
    return scenario.run(schedule)


def random_schedule(descriptor, events, seed=0, spacing=0.05):
    """
    Random physical inputs on every input device of `descriptor`, one
    byte each.
    """
    rng = np.random.default_rng(seed)
    devices = [d for node in descriptor.nodes.values()
               for d, kind in node.devices.items() if kind == 'input']
    if not devices:
        raise ScenarioError('descriptor has no input device')
    schedule = []
    for i in range(events):
        device = devices[int(rng.integers(0, len(devices)))]
        value = bytes([int(rng.integers(0, 101))])
        schedule.append(ScheduleItem(spacing * (i + 1),
                                     DEVICE_PREFIX + device, value))
    return schedule
