# -*- coding: utf-8 -*-
import json

from authex.descriptor import DEPLOYER, DEVICE_PREFIX
from authex.errors import AuthFailure, Timeout, Unestablished
from authex.log_utils import init_logging


"""
This module contains the authenticity oracle. It re-executes the
application behaviors, network free, on the inputs recorded in a trace
and searches for an execution that produces exactly the actuations the
devices recorded.

The search treats every connection as a FIFO the attacker may cut at
any point: events are delivered in order until the connection dies,
which is what sealed events with per-connection nonces allow. Module
requests may be answered, lost or left pending, and their replies may
be forged; a pending request is handled later and its reply discarded.

The search respects recorded time: an input is only consumed while no
actuation recorded before it is still unexplained, so an actuation can
only follow from inputs recorded no later than itself.
"""

logger = init_logging('oracle')

ORDERINGS = ('per-device', 'global')

REQUEST_CHOICES = ('reply', 'lost', 'late', 'forged', 'forged-late')
PENDING_CHOICES = ('late', 'lost', 'forged-late')


class Verdict(object):
    """
    **Attributes**

    ok : bool
        an explanation was found; an inconclusive search is not ok

    violations : list of str

    explored : int
        states visited

    inconclusive : bool
        the state budget ran out before an explanation was found
    """

    def __init__(self, violations=(), explored=0, inconclusive=False):
        self.violations = list(violations)
        self.explored = explored
        self.inconclusive = inconclusive

    @property
    def ok(self):
        return not self.violations and not self.inconclusive

    def __bool__(self):
        return self.ok

    def __repr__(self):
        return 'Verdict(ok=%s, violations=%d, explored=%d%s)' % (
            self.ok, len(self.violations), self.explored,
            ', inconclusive' if self.inconclusive else '')


class _NeedChoice(Exception):

    def __init__(self, options):
        self.options = options


class _Chooser(object):

    def __init__(self, script):
        self.script = script
        self.position = 0

    def next(self, options):
        if self.position == len(self.script):
            raise _NeedChoice(options)
        choice = self.script[self.position]
        self.position += 1
        return choice


class _Work(object):
    """Mutable copy of a world while one transition runs."""

    def __init__(self, world):
        states, queues, dead, positions, matched = world
        self.states = list(states)
        self.queues = [list(q) for q in queues]
        self.dead = list(dead)
        self.positions = positions
        self.matched = list(matched)

    def freeze(self):
        return (tuple(self.states), tuple(tuple(q) for q in self.queues),
                tuple(self.dead), self.positions, tuple(self.matched))


class _Context(object):
    """Stand-in for the module context inside the reference run."""

    def __init__(self, model, work, module, chooser, conn_id=None):
        self._model = model
        self._work = work
        self._module = module
        self._chooser = chooser
        self.conn_id = conn_id
        self.caller_id = 0
        self.module_id = 0
        self.outputs = []

    def output(self, label, payload):
        self.outputs.append((label, bytes(payload)))

    def request(self, label, payload, timeout=None):
        model, work = self._model, self._work
        index = model.request_edges.get((self._module, label))
        if index is None:
            raise Unestablished('%s.%s has no handler connected'
                                % (self._module, label))
        if work.dead[index]:
            raise Timeout('connection is dead')
        if work.queues[index]:
            choice = self._chooser.next(PENDING_CHOICES)
        else:
            choice = self._chooser.next(REQUEST_CHOICES)
        if choice == 'lost':
            work.dead[index] = True
            work.queues[index] = []
            raise Timeout('request lost')
        if choice in ('late', 'forged-late'):
            work.queues[index].append(bytes(payload))
            if choice == 'forged-late':
                raise AuthFailure('reply does not verify')
            raise Timeout('request pending')
        conn = model.connections[index]
        reply = model.invoke(work, conn.dest.module, conn.dest.label,
                             bytes(payload), self._chooser)
        if reply is None:
            raise Timeout('handler failed')
        if choice == 'forged':
            raise AuthFailure('reply does not verify')
        return reply

    def now(self):
        return 0.0


class _Model(object):
    """Static structure of a descriptor as seen by the search."""

    def __init__(self, descriptor):
        self.descriptor = descriptor
        self.module_names = list(descriptor.modules)
        self.module_index = dict((n, i) for i, n in
                                 enumerate(self.module_names))
        self.classes = dict((n, s.behavior_class())
                            for n, s in descriptor.modules.items())
        self.inits = dict((n, s.init) for n, s in descriptor.modules.items())
        self.connections = list(descriptor.connections.values())
        self.out_edges = {}
        self.source_edges = {}
        self.request_edges = {}
        for index, conn in enumerate(self.connections):
            src = conn.src
            if src.kind == 'device':
                self.source_edges.setdefault(DEVICE_PREFIX + src.device,
                                             []).append(index)
            elif src.kind == DEPLOYER:
                self.source_edges.setdefault(conn.name, []).append(index)
            elif conn.kind == 'request':
                self.request_edges.setdefault((src.module, src.label), index)
            else:
                self.out_edges.setdefault((src.module, src.label),
                                          []).append(index)
        self.output_devices = [d for node in descriptor.nodes.values()
                               for d, kind in node.devices.items()
                               if kind == 'output']

    def initial_states(self):
        return tuple(self.classes[n](self.inits[n]).freeze()
                     for n in self.module_names)

    def invoke(self, work, module, label, payload, chooser):
        """
        Runs one handler on `work`. Returns the reply, or None when the
        handler fails; a failed handler leaves its module unchanged and
        its outputs unsent.
        """
        i = self.module_index[module]
        behavior = self.classes[module](self.inits[module])
        behavior.state = json.loads(work.states[i])
        handler = behavior.handler_for(label)
        if handler is None:
            return None
        ctx = _Context(self, work, module, chooser)
        try:
            result = handler(ctx, payload)
        except _NeedChoice:
            raise
        except Exception as e:
            logger.debug('%s.%s failed in the reference run: %s', module,
                         label, e)
            return None
        work.states[i] = behavior.freeze()
        for out_label, out_payload in ctx.outputs:
            for index in self.out_edges.get((module, out_label), ()):
                if not work.dead[index]:
                    work.queues[index].append(out_payload)
        return b'' if result is None else bytes(result)


class _Search(object):

    def __init__(self, model, inputs, actuations, ordering, max_states):
        self.model = model
        self.inputs = inputs
        self.actuations = actuations
        self.ordering = ordering
        self.max_states = max_states
        self.sources = sorted(set(source for _, source, _ in inputs))
        self.per_source = dict((s, [(i, ts, v) for i, (ts, src, v)
                                    in enumerate(inputs) if src == s])
                               for s in self.sources)
        self.devices = sorted(actuations)
        self.explored = 0
        self.best = None

    def initial(self):
        n = len(self.model.connections)
        return (self.model.initial_states(), tuple(() for _ in range(n)),
                tuple(False for _ in range(n)),
                tuple(0 for _ in self.sources),
                tuple(0 for _ in self.devices))

    def accepting(self, world):
        return all(world[4][k] == len(self.actuations[d])
                   for k, d in enumerate(self.devices))

    def run(self):
        """
        **Returns**

        (found, exhausted) : (bool, bool)
        """
        start = self.initial()
        seen = {start}
        stack = [start]
        while stack:
            world = stack.pop()
            self.explored += 1
            if self.best is None or sum(world[4]) > sum(self.best[4]):
                self.best = world
            if self.accepting(world):
                return True, False
            if self.explored >= self.max_states:
                return False, False
            successors = self.successors(world)
            for successor in reversed(successors):
                if successor not in seen:
                    seen.add(successor)
                    stack.append(successor)
        return False, True

    def successors(self, world):
        result = []
        queues, dead = world[1], world[2]
        for index, queue in enumerate(queues):
            if queue:
                result.extend(self.deliver(world, index))
        for source in self.next_sources(world):
            result.extend(self.inject(world, source))
        for index, queue in enumerate(queues):
            if queue and not dead[index]:
                work = _Work(world)
                work.queues[index] = []
                work.dead[index] = True
                result.append(work.freeze())
        return result

    def deadline(self, world):
        """Time of the earliest actuation still unexplained, or None."""
        times = [self.actuations[d][world[4][k]][0]
                 for k, d in enumerate(self.devices)
                 if world[4][k] < len(self.actuations[d])]
        return min(times) if times else None

    def next_sources(self, world):
        positions = world[3]
        deadline = self.deadline(world)
        pending = []
        for k, source in enumerate(self.sources):
            events = self.per_source[source]
            if positions[k] < len(events):
                if deadline is not None and \
                        events[positions[k]][1] > deadline:
                    continue
                pending.append((events[positions[k]][0], k, source))
        pending.sort()
        if self.ordering == 'global':
            consumed = sum(positions)
            pending = [p for p in pending if p[0] == consumed]
        return [source for _, _, source in pending]

    def inject(self, world, source):
        k = self.sources.index(source)
        _, _, value = self.per_source[source][world[3][k]]
        work = _Work(world)
        positions = list(work.positions)
        positions[k] += 1
        work.positions = tuple(positions)
        for index in self.model.source_edges.get(source, ()):
            if not work.dead[index]:
                work.queues[index].append(bytes(value))
        return [work.freeze()]

    def deliver(self, world, index):
        conn = self.model.connections[index]
        if conn.dest.kind == 'device':
            return self.deliver_to_device(world, index, conn.dest.device)
        return self.with_choices(world, index, conn)

    def deliver_to_device(self, world, index, device):
        if device not in self.devices:
            return []
        k = self.devices.index(device)
        position = world[4][k]
        expected = self.actuations[device]
        payload = world[1][index][0]
        if position >= len(expected) or expected[position][1] != payload:
            return []
        work = _Work(world)
        work.queues[index].pop(0)
        work.matched[k] += 1
        return [work.freeze()]

    def with_choices(self, world, index, conn):
        """Every outcome of one handler run, one per request script."""
        results = []
        scripts = [[]]
        while scripts:
            script = scripts.pop()
            work = _Work(world)
            payload = work.queues[index].pop(0)
            try:
                self.model.invoke(work, conn.dest.module, conn.dest.label,
                                  payload, _Chooser(script))
            except _NeedChoice as need:
                scripts.extend(script + [option]
                               for option in reversed(need.options))
                continue
            results.append(work.freeze())
        return results

    def describe_failure(self):
        violations = []
        best = self.best or self.initial()
        for k, device in enumerate(self.devices):
            position = best[4][k]
            expected = self.actuations[device]
            if position < len(expected):
                violations.append(
                    'actuation %d of %s (value %s) is not explained by the '
                    'recorded inputs' % (position, device,
                                         expected[position][1].hex()))
        return violations


def verify_authenticity(trace, descriptor, ordering='per-device',
                        max_states=200000):
    """
    Checks that the actuations of `trace` follow from its inputs.

    **Parameters**

    trace : harness.CausalTrace

    descriptor : descriptor.Descriptor

    ordering : str
        'per-device' lets inputs of different devices interleave freely;
        'global' keeps the recorded order across devices

    max_states : int
        search budget

    **Returns**

    verdict : Verdict
    """
    if ordering not in ORDERINGS:
        raise ValueError('ordering must be one of %s' % (ORDERINGS,))
    model = _Model(descriptor)
    inputs = [(ts, source, bytes(value))
              for ts, source, value in trace.inputs()]
    actuations = {}
    unknown = []
    for ts, device, value in trace.actuations():
        if device not in model.output_devices:
            unknown.append('actuation on %s, which no connection drives'
                           % device)
            continue
        actuations.setdefault(device, []).append((ts, bytes(value)))
    if unknown:
        return Verdict(unknown)
    search = _Search(model, inputs, actuations, ordering, max_states)
    found, exhausted = search.run()
    if found:
        return Verdict((), search.explored)
    if not exhausted:
        logger.warning('authenticity search stopped after %d states',
                       search.explored)
        return Verdict((), search.explored, inconclusive=True)
    return Verdict(search.describe_failure(), search.explored)


def verify_attribution(trace, fingerprints):
    """
    Every actuation must carry the fingerprint of a key leased for its
    device.

    **Parameters**

    fingerprints : dict
        device id -> set of key fingerprints

    **Returns**

    violations : list of str
    """
    violations = []
    for record in trace.of_kind('actuation'):
        device = record.fields['device']
        attribution = record.fields['attribution'].strip()
        if attribution not in fingerprints.get(device, ()):
            violations.append('actuation on %s at %.6f attributed to %s'
                              % (device, record.ts, attribution))
    return violations


def lease_fingerprints(state):
    """device id -> fingerprints recorded by a deployment state."""
    result = {}
    for lease in state.leases.values():
        if lease.get('fingerprint'):
            result.setdefault(lease['device'], set()).add(
                lease['fingerprint'])
    return result

