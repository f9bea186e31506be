# -*- coding: utf-8 -*-
import copy
import importlib
import json

from authex.errors import UnknownBehavior
from authex.module_package import EndpointKind, ModulePackage


"""
This module contains the behavior interface and the behavior registry.

A behavior is the application source of one module. The same class is
executed by the enclave runtime and by the reference interpreter of the
authenticity oracle, so handlers only touch `self.state` and the
context object they receive:

    ctx.output(label, payload)
    ctx.request(label, payload, timeout=None) -> reply
    ctx.caller_id, ctx.module_id, ctx.conn_id

Input and request handlers are methods named on_<label>; user entry
points are methods named entry_<name>, numbered from 3 in declaration
order.
"""

FIRST_USER_ENTRY = 3

_registry = {}

# modules registering the built-in behaviors
BUILTIN_MODULES = (
    'authex.apps',
    'authex.secure_io',
    'authex.attestation_manager',
)


def register(*names):
    """Class decorator registering a behavior under one or more names."""
    def decorator(cls):
        for name in names or (cls.__name__,):
            _registry[name] = cls
        return cls
    return decorator


def _load_builtins():
    for module in BUILTIN_MODULES:
        importlib.import_module(module)


def lookup(name):
    if name not in _registry:
        _load_builtins()
    try:
        return _registry[name]
    except KeyError:
        raise UnknownBehavior('no behavior registered as %r' % (name,))


def registered():
    _load_builtins()
    return sorted(_registry)


class Behavior(object):
    """
    Base class of module behaviors. Subclasses declare their endpoint
    labels in `inputs`, `outputs`, `requests` and `handlers`, their
    entry points in `entries`, and keep all mutable data in `self.state`.

    **Parameters**

    init : bytes
        initialization data carried by the module package
    """

    inputs = ()
    outputs = ()
    requests = ()
    handlers = ()
    entries = ()

    def __init__(self, init=b''):
        self.init = bytes(init)
        self.state = self.initial_state(self.init)

    def initial_state(self, init):
        return {}

    def snapshot(self):
        return copy.deepcopy(self.state)

    def restore(self, snapshot):
        self.state = snapshot

    def freeze(self):
        """Hashable image of the state, used by the oracle's memo."""
        return json.dumps(self.state, sort_keys=True, default=_jsonable)

    @classmethod
    def declared(cls):
        """Endpoint labels with their kinds, in package order."""
        groups = ((EndpointKind.INPUT, cls.inputs),
                  (EndpointKind.OUTPUT, cls.outputs),
                  (EndpointKind.REQUEST, cls.requests),
                  (EndpointKind.HANDLER, cls.handlers))
        return [(label, kind) for kind, labels in groups for label in labels]

    @classmethod
    def package(cls, name, vendor_id, init=b''):
        """Builds a package with io_ids numbered in declaration order."""
        groups = {kind: [] for kind in EndpointKind}
        for io_id, (label, kind) in enumerate(cls.declared()):
            groups[kind].append((io_id, label))
        return ModulePackage(name, vendor_id,
                             groups[EndpointKind.INPUT],
                             groups[EndpointKind.OUTPUT],
                             groups[EndpointKind.REQUEST],
                             groups[EndpointKind.HANDLER],
                             init)

    @classmethod
    def entry_ids(cls):
        return dict((name, FIRST_USER_ENTRY + i)
                    for i, name in enumerate(cls.entries))

    def handler_for(self, label):
        return getattr(self, 'on_%s' % label, None)

    def entry_for(self, entry_id):
        index = entry_id - FIRST_USER_ENTRY
        if not 0 <= index < len(self.entries):
            return None
        return getattr(self, 'entry_%s' % self.entries[index], None)

    def __repr__(self):
        info = ''.join(self.__class__.__name__) + '\n'
        for key in sorted(self.state):
            info += '%s : %s\n' % (key, self.state[key])
        return info


class Transferable(object):
    """
    Mixin adding the state-transfer endpoints used by updates: the old
    instance's `save` entry emits its state on `transfer`; the new
    instance receives it on `restore`.
    """

    TRANSFER_OUTPUT = 'transfer'
    RESTORE_INPUT = 'restore'
    SAVE_ENTRY = 'save'

    def entry_save(self, ctx, args):
        ctx.output(self.TRANSFER_OUTPUT, encode_state(self.state))
        return b''

    def on_restore(self, ctx, payload):
        self.state = decode_state(payload)


def encode_state(state):
    return json.dumps(state, sort_keys=True, default=_jsonable).encode()


def decode_state(payload):
    return json.loads(payload.decode())


def _jsonable(value):
    if isinstance(value, (bytes, bytearray)):
        return value.hex()
    raise TypeError('state values must be JSON serializable: %r' % (value,))
