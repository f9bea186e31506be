# -*- coding: utf-8 -*-
import enum
import struct
from collections import namedtuple

from authex.crypto_core import sha256
from authex.errors import DuplicateIoId, MalformedPackage


"""
This module contains the ModulePackage byte format:

    name_len(1) | name | vendor_id(2) | n_inputs(1) | n_outputs(1) |
    n_requests(1) | n_handlers(1) | endpoint records | init_len(2) | init

with one record io_id(2) | label_len(1) | label per endpoint, in the
order inputs, outputs, requests, handlers. Integers are big-endian.
"""


class EndpointKind(enum.Enum):
    INPUT = 'input'
    OUTPUT = 'output'
    REQUEST = 'request'
    HANDLER = 'handler'


KIND_ORDER = (EndpointKind.INPUT, EndpointKind.OUTPUT,
              EndpointKind.REQUEST, EndpointKind.HANDLER)

Endpoint = namedtuple('Endpoint', ['io_id', 'label', 'kind'])


class ModulePackage(object):
    """
    Deployable description of one module.

    **Parameters**

    name : str
        registered behavior name

    vendor_id : int

    inputs, outputs, requests, handlers : list of (io_id, label)

    init : bytes
        behavior initialization data
    """

    def __init__(self, name, vendor_id, inputs=(), outputs=(), requests=(),
                 handlers=(), init=b'', raw=None):
        self.name = name
        self.vendor_id = vendor_id
        self.inputs = [tuple(e) for e in inputs]
        self.outputs = [tuple(e) for e in outputs]
        self.requests = [tuple(e) for e in requests]
        self.handlers = [tuple(e) for e in handlers]
        self.init = bytes(init)
        self.validate()
        self._raw = raw

    def validate(self):
        seen = set()
        for endpoint in self.endpoints():
            if endpoint.io_id in seen:
                raise DuplicateIoId('io_id %d declared twice in %s'
                                    % (endpoint.io_id, self.name))
            seen.add(endpoint.io_id)
        labels = [e.label for e in self.endpoints()]
        if len(set(labels)) != len(labels):
            raise MalformedPackage('duplicate endpoint label in %s'
                                   % self.name)

    def endpoints(self):
        groups = (self.inputs, self.outputs, self.requests, self.handlers)
        result = []
        for kind, group in zip(KIND_ORDER, groups):
            for io_id, label in group:
                result.append(Endpoint(io_id, label, kind))
        return result

    def endpoint(self, label):
        for endpoint in self.endpoints():
            if endpoint.label == label:
                return endpoint
        return None

    def endpoint_by_id(self, io_id):
        for endpoint in self.endpoints():
            if endpoint.io_id == io_id:
                return endpoint
        return None

    def encode(self):
        if self._raw is not None:
            return self._raw
        name = self.name.encode('utf-8')
        if not 0 < len(name) < 256:
            raise MalformedPackage('module name must be 1..255 bytes')
        out = [struct.pack('>B', len(name)), name,
               struct.pack('>HBBBB', self.vendor_id, len(self.inputs),
                           len(self.outputs), len(self.requests),
                           len(self.handlers))]
        for endpoint in self.endpoints():
            label = endpoint.label.encode('utf-8')
            if len(label) > 255:
                raise MalformedPackage('label too long: %s' % endpoint.label)
            out.append(struct.pack('>HB', endpoint.io_id, len(label)))
            out.append(label)
        if len(self.init) > 0xFFFF:
            raise MalformedPackage('init data too long')
        out.append(struct.pack('>H', len(self.init)))
        out.append(self.init)
        self._raw = b''.join(out)
        return self._raw

    def identity(self):
        return sha256(self.encode())

    def __eq__(self, other):
        return (isinstance(other, ModulePackage)
                and self.encode() == other.encode())

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self.encode())

    def __repr__(self):
        return '%s(%s, vendor=%d, io=%d)' % (self.__class__.__name__,
                                             self.name, self.vendor_id,
                                             len(self.endpoints()))

    @classmethod
    def parse(cls, data):
        """
        Decodes package bytes; the exact bytes are kept for hashing.

        Raises MalformedPackage on truncation, trailing bytes or bad
        UTF-8, and DuplicateIoId on repeated io_ids.
        """
        data = bytes(data)
        reader = _Reader(data)
        try:
            name = reader.take(reader.u8()).decode('utf-8')
            if not name:
                raise MalformedPackage('empty module name')
            vendor_id = reader.u16()
            counts = [reader.u8() for _ in KIND_ORDER]
            groups = []
            for n in counts:
                group = []
                for _ in range(n):
                    io_id = reader.u16()
                    label = reader.take(reader.u8()).decode('utf-8')
                    group.append((io_id, label))
                groups.append(group)
            init = reader.take(reader.u16())
        except UnicodeDecodeError:
            raise MalformedPackage('bad UTF-8 in package')
        if reader.remaining():
            raise MalformedPackage('%d trailing bytes' % reader.remaining())
        return cls(name, vendor_id, groups[0], groups[1], groups[2],
                   groups[3], init, raw=data)


class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise MalformedPackage('truncated package')
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack('>H', self.take(2))[0]

    def remaining(self):
        return len(self.data) - self.pos
