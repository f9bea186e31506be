# -*- coding: utf-8 -*-
import struct

from authex.errors import (AuthexError, RemoteError, WireError,
                           error_classes)


"""
This module contains the event-manager wire protocol. A frame is

    opcode(1) | length(2, big-endian) | body

with one frame per request. LoadModule, CallEntry and AddConnection are
answered by an Ack or Error frame; RemoteEvent has no response.
"""

OP_LOAD_MODULE = 0x00
OP_CALL_ENTRY = 0x01
OP_ADD_CONNECTION = 0x02
OP_REMOTE_EVENT = 0x03
OP_ACK = 0x04
OP_ERROR = 0x05

OPCODE_NAMES = {
    OP_LOAD_MODULE: 'LoadModule',
    OP_CALL_ENTRY: 'CallEntry',
    OP_ADD_CONNECTION: 'AddConnection',
    OP_REMOTE_EVENT: 'RemoteEvent',
    OP_ACK: 'Ack',
    OP_ERROR: 'Error',
}

HEADER = struct.Struct('>BH')
MAX_BODY = 0xFFFF

# CallEntry id reserved by the event manager for deactivating a module
ENTRY_UNLOAD = 0xFFFF


def encode_frame(opcode, body=b''):
    if len(body) > MAX_BODY:
        raise WireError('frame body of %d bytes exceeds %d'
                        % (len(body), MAX_BODY))
    return HEADER.pack(opcode, len(body)) + bytes(body)


def decode_frame(data):
    """
    **Returns**

    (opcode, body) : (int, bytes)
    """
    if len(data) < HEADER.size:
        raise WireError('truncated frame header')
    opcode, length = HEADER.unpack(data[:HEADER.size])
    body = data[HEADER.size:]
    if len(body) != length:
        raise WireError('frame announces %d bytes, carries %d'
                        % (length, len(body)))
    return opcode, bytes(body)


def _recv_exactly(sock, n):
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b''.join(chunks)


def read_frame(sock):
    """Reads one frame; returns None on a clean end of stream."""
    header = _recv_exactly(sock, HEADER.size)
    if header is None:
        return None
    opcode, length = HEADER.unpack(header)
    body = _recv_exactly(sock, length) if length else b''
    if body is None:
        raise WireError('connection closed inside a frame')
    return opcode, body


def write_frame(sock, opcode, body=b''):
    sock.sendall(encode_frame(opcode, body))


#
# bodies
#

def _need(body, n, what):
    if len(body) < n:
        raise WireError('%s body too short' % what)


def encode_load_reply(module_id, identity):
    return struct.pack('>H', module_id) + bytes(identity)


def decode_load_reply(body):
    if len(body) != 34:
        raise WireError('LoadModule reply must be 34 bytes')
    return struct.unpack('>H', body[:2])[0], body[2:]


def encode_call_entry(module_id, entry_id, args=b''):
    return struct.pack('>HH', module_id, entry_id) + bytes(args)


def decode_call_entry(body):
    _need(body, 4, 'CallEntry')
    module_id, entry_id = struct.unpack('>HH', body[:4])
    return module_id, entry_id, body[4:]


def encode_add_connection(conn_id, src_module_id, dest_address,
                          dest_module_id):
    address = dest_address.encode('utf-8')
    if len(address) > 255:
        raise WireError('destination address too long')
    return (struct.pack('>HHB', conn_id, src_module_id, len(address))
            + address + struct.pack('>H', dest_module_id))


def decode_add_connection(body):
    _need(body, 5, 'AddConnection')
    conn_id, src_module_id, n = struct.unpack('>HHB', body[:5])
    if len(body) != 5 + n + 2:
        raise WireError('AddConnection body has the wrong length')
    try:
        address = body[5:5 + n].decode('utf-8')
    except UnicodeDecodeError:
        raise WireError('destination address is not UTF-8')
    dest_module_id = struct.unpack('>H', body[5 + n:])[0]
    return conn_id, src_module_id, address, dest_module_id


def encode_remote_event(dest_module_id, conn_id, payload):
    return struct.pack('>HH', dest_module_id, conn_id) + bytes(payload)


def decode_remote_event(body):
    _need(body, 4, 'RemoteEvent')
    dest_module_id, conn_id = struct.unpack('>HH', body[:4])
    return dest_module_id, conn_id, body[4:]


def encode_error(exc):
    if isinstance(exc, RemoteError):
        name, message = exc.name, exc.message
    else:
        name, message = exc.__class__.__name__, str(exc)
    return ('%s: %s' % (name, message)).encode('utf-8', 'replace')


def decode_error(body):
    text = body.decode('utf-8', 'replace')
    name, _, message = text.partition(': ')
    return name, message


def raise_remote_error(body):
    """Re-raises an Error frame body as the matching local exception."""
    name, message = decode_error(body)
    cls = error_classes().get(name)
    if cls is not None and cls is not RemoteError:
        try:
            error = cls(message)
        except TypeError:
            error = None
        if isinstance(error, AuthexError):
            raise error
    raise RemoteError(name, message)


def check_reply(opcode, body):
    """Returns the body of an Ack frame; raises for Error frames."""
    if opcode == OP_ACK:
        return body
    if opcode == OP_ERROR:
        raise_remote_error(body)
    raise WireError('unexpected reply opcode 0x%02x' % opcode)
