#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_wire
----------------------------------

Tests for `authex.wire` module.
"""

import struct
import unittest
from unittest.mock import MagicMock

import numpy as np

from authex import wire
from authex.errors import (CapacityExceeded, RemoteError, StaleSequence,
                           UnknownModule, WireError)
from tests import FULL_CORPUS


class TestFrames(unittest.TestCase):

    def setUp(self):
        pass

    def test_header_layout(self):
        frame = wire.encode_frame(wire.OP_CALL_ENTRY, b'abc')
        self.assertEqual(frame, b'\x01\x00\x03abc')
        self.assertEqual(wire.decode_frame(frame),
                         (wire.OP_CALL_ENTRY, b'abc'))

    def test_length_mismatch(self):
        with self.assertRaises(WireError):
            wire.decode_frame(b'\x01\x00\x04abc')
        with self.assertRaises(WireError):
            wire.decode_frame(b'\x01\x00')

    def test_oversized_body(self):
        with self.assertRaises(WireError):
            wire.encode_frame(wire.OP_REMOTE_EVENT, bytes(0x10000))
        frame = wire.encode_frame(wire.OP_REMOTE_EVENT, bytes(0xFFFF))
        self.assertEqual(frame[1:3], b'\xff\xff')

    def test_read_frame_from_chunks(self):
        """bodies split across recv() calls are reassembled"""
        sock = MagicMock()
        sock.recv.side_effect = [b'\x03', b'\x00\x05', b'he', b'llo']
        self.assertEqual(wire.read_frame(sock),
                         (wire.OP_REMOTE_EVENT, b'hello'))

    def test_read_frame_end_of_stream(self):
        sock = MagicMock()
        sock.recv.side_effect = [b'']
        self.assertIsNone(wire.read_frame(sock))
        sock.recv.side_effect = [b'\x03\x00\x05', b'he', b'']
        with self.assertRaises(WireError):
            wire.read_frame(sock)

    def test_write_frame(self):
        sock = MagicMock()
        wire.write_frame(sock, wire.OP_ACK, b'\x00\x07')
        sock.sendall.assert_called_once_with(
            struct.pack('>BH', wire.OP_ACK, 2) + b'\x00\x07')

    def tearDown(self):
        pass


class TestBodies(unittest.TestCase):

    def setUp(self):
        pass

    def test_call_entry(self):
        body = wire.encode_call_entry(3, wire.ENTRY_UNLOAD, b'x')
        self.assertEqual(body, b'\x00\x03\xff\xffx')
        self.assertEqual(wire.decode_call_entry(body),
                         (3, wire.ENTRY_UNLOAD, b'x'))
        with self.assertRaises(WireError):
            wire.decode_call_entry(b'\x00\x03\xff')

    def test_add_connection(self):
        body = wire.encode_add_connection(7, 2, 'n2:6000', 5)
        self.assertEqual(body, b'\x00\x07\x00\x02\x07n2:6000\x00\x05')
        self.assertEqual(wire.decode_add_connection(body),
                         (7, 2, 'n2:6000', 5))
        with self.assertRaises(WireError):
            wire.decode_add_connection(body[:-1])
        with self.assertRaises(WireError):
            wire.decode_add_connection(b'\x00\x07\x00\x02\x02\xff\xfe\x00')

    def test_remote_event(self):
        body = wire.encode_remote_event(4, 9, b'sealed')
        self.assertEqual(wire.decode_remote_event(body), (4, 9, b'sealed'))
        with self.assertRaises(WireError):
            wire.decode_remote_event(b'\x00\x04')

    def test_load_reply(self):
        body = wire.encode_load_reply(6, bytes(32))
        self.assertEqual(wire.decode_load_reply(body), (6, bytes(32)))
        with self.assertRaises(WireError):
            wire.decode_load_reply(body[:-1])

    def tearDown(self):
        pass


class TestErrors(unittest.TestCase):

    def setUp(self):
        pass

    def test_error_body(self):
        body = wire.encode_error(UnknownModule('no module 4'))
        self.assertEqual(body, b'UnknownModule: no module 4')
        self.assertEqual(wire.decode_error(body),
                         ('UnknownModule', 'no module 4'))

    def test_known_errors_reraised(self):
        for cls in (UnknownModule, CapacityExceeded, StaleSequence):
            with self.assertRaises(cls):
                wire.check_reply(wire.OP_ERROR,
                                 wire.encode_error(cls('message')))

    def test_unknown_errors_become_remote(self):
        with self.assertRaises(RemoteError) as ctx:
            wire.check_reply(wire.OP_ERROR, b'KeyError: boom')
        self.assertEqual(ctx.exception.name, 'KeyError')
        with self.assertRaises(RemoteError):
            wire.raise_remote_error(b'garbage')

    def test_remote_error_forwarded_unchanged(self):
        body = wire.encode_error(RemoteError('ValueError', 'x'))
        self.assertEqual(body, b'ValueError: x')

    def test_ack_and_bad_opcode(self):
        self.assertEqual(wire.check_reply(wire.OP_ACK, b'ok'), b'ok')
        with self.assertRaises(WireError):
            wire.check_reply(0x42, b'')

    def tearDown(self):
        pass


class TestFuzzedFrames(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.count = 10 ** 5 if FULL_CORPUS else 5000

    def test_decoders_only_raise_wire_errors(self):
        """random bytes either decode or raise WireError"""
        decoders = (wire.decode_frame, wire.decode_call_entry,
                    wire.decode_add_connection, wire.decode_remote_event,
                    wire.decode_load_reply)
        for _ in range(self.count):
            data = self.rng.bytes(int(self.rng.integers(0, 40)))
            for decode in decoders:
                try:
                    decode(data)
                except WireError:
                    pass

    def tearDown(self):
        pass


if __name__ == '__main__':
    unittest.main()
