#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_secure_io
----------------------------------

Tests for `authex.secure_io` module.
"""

import unittest

from Cryptodome.Cipher import AES as CryptodomeAES

from authex import secure_io as sio
from authex.crypto_core import (CipherSuite, key_fingerprint, open_event,
                                seal_event)
from authex.errors import (AuthFailure, CallerRejected, LeaseError,
                           LeaseHeld, NonceMismatch, ReleaseRejected,
                           UnknownDevice)
from authex.tee_sim import Node, NodeConfig

AES = CipherSuite.AES_GCM_128
ROOT = b'\x0b' * 16

# driver ids follow device order: S1 -> 1/2, A -> 3/4
S1_DRIVER = 1
A_DRIVER = 3
A_MMIO = 4


class RecordingManager(object):

    def __init__(self):
        self.events = []

    def handle_local_event(self, module_id, conn_id, sealed):
        self.events.append((module_id, conn_id, sealed))

    def on_reset(self):
        pass


class SecureIoTestCase(unittest.TestCase):

    def setUp(self):
        self.t = 0.0
        self.config = NodeConfig('np1', 'np1:6000', 'sancus', ROOT, [1],
                                 devices=[('S1', 'input'), ('A', 'output')])
        self.node = Node(self.config, lambda: self.t, {'seed': 5})
        self.manager = RecordingManager()
        self.node.attach(self.manager)
        self.provider = sio.InfrastructureProvider(lambda: self.t,
                                                   {'lease_time': 10.0})
        self.provider.add_node(self.config)
        self.key = b'\x21' * 16

    def grant(self, device, driver_id, conn_id, key, deployer='d1',
              exclusive=True):
        nonce = sio.driver_get_nonce(self.node, driver_id)
        blob = self.provider.grant_exclusive(deployer, 'np1', device, nonce,
                                             key, exclusive)
        confirmation = sio.driver_set_exclusive(self.node, driver_id,
                                                conn_id, nonce, blob,
                                                exclusive)
        return nonce, blob, confirmation

    def tearDown(self):
        pass


class TestBoot(SecureIoTestCase):

    def test_layout(self):
        self.assertEqual(self.node.bindings['S1'].driver_id, S1_DRIVER)
        self.assertEqual(self.node.bindings['A'].mmio_id, A_MMIO)
        self.assertEqual(self.provider.binding('np1', 'A').driver_id,
                         A_DRIVER)

    def test_driver_key_matches_node(self):
        """the provider derives the key the node gave the driver"""
        nonce, blob, confirmation = self.grant('A', A_DRIVER, 9, self.key)
        self.assertTrue(sio.verify_confirmation(self.key, nonce,
                                                confirmation))

    def test_nonces_are_fresh(self):
        first = sio.driver_get_nonce(self.node, S1_DRIVER)
        self.assertEqual(len(first), sio.NONCE_BYTES)
        self.grant('S1', S1_DRIVER, 5, self.key)
        self.assertNotEqual(sio.driver_get_nonce(self.node, S1_DRIVER),
                            first)

    def test_boot_entry_reserved(self):
        with self.assertRaises(CallerRejected):
            self.node.call_entry(S1_DRIVER, sio.ENTRY_BOOT)


class TestInputs(SecureIoTestCase):

    def test_input_sealed_to_grantee(self):
        self.grant('S1', S1_DRIVER, 5, self.key)
        sio.inject_physical_input(self.node, 'S1', b'\x50')
        sio.inject_physical_input(self.node, 'S1', b'\x51')
        self.assertEqual(
            [(m, c, open_event(AES, self.key, n, sealed))
             for n, (m, c, sealed) in enumerate(self.manager.events)],
            [(S1_DRIVER, 5, b'\x50'), (S1_DRIVER, 5, b'\x51')])
        self.assertEqual([r.value for r in self.node.devices['S1'].inputs()],
                         [b'\x50', b'\x51'])

    def test_input_without_grant(self):
        sio.inject_physical_input(self.node, 'S1', b'\x50')
        self.assertEqual(self.manager.events, [])

    def test_shared_input(self):
        """shared grants coexist; an exclusive grant evicts them"""
        other = b'\x22' * 16
        self.grant('S1', S1_DRIVER, 5, self.key, exclusive=False)
        self.grant('S1', S1_DRIVER, 6, other, deployer='d2',
                   exclusive=False)
        sio.inject_physical_input(self.node, 'S1', b'\x01')
        self.assertEqual(sorted(c for _, c, _ in self.manager.events),
                         [5, 6])
        with self.assertRaises(LeaseHeld):
            self.provider.acquire_lease('d3', 'np1', 'S1', exclusive=True)

    def test_interrupt_only_from_irq(self):
        with self.assertRaises(CallerRejected):
            self.node.call_entry(S1_DRIVER, sio.ENTRY_INTERRUPT)

    def test_unknown_device(self):
        with self.assertRaises(UnknownDevice):
            sio.inject_physical_input(self.node, 'X', b'\x01')
        with self.assertRaises(UnknownDevice):
            sio.inject_physical_input(self.node, 'A', b'\x01')


class TestOutputs(SecureIoTestCase):

    def test_actuation_attributed(self):
        self.grant('A', A_DRIVER, 9, self.key)
        sio.actuate_output(self.node, A_DRIVER, 9,
                           seal_event(AES, self.key, 0, b'\x00'))
        records = self.node.devices['A'].actuations()
        self.assertEqual([r.value for r in records], [b'\x00'])
        self.assertEqual(records[0].attribution, key_fingerprint(self.key))

    def test_forged_actuation_dropped(self):
        self.grant('A', A_DRIVER, 9, self.key)
        sio.actuate_output(self.node, A_DRIVER, 9,
                           seal_event(AES, b'\x23' * 16, 0, b'\x00'))
        sio.actuate_output(self.node, A_DRIVER, 8,
                           seal_event(AES, self.key, 0, b'\x00'))
        self.assertEqual(self.node.devices['A'].actuations(), [])

    def test_new_owner_evicts_old(self):
        old = b'\x24' * 16
        self.grant('A', A_DRIVER, 9, old)
        self.t = 11.0
        self.grant('A', A_DRIVER, 10, self.key, deployer='d2')
        sio.actuate_output(self.node, A_DRIVER, 9,
                           seal_event(AES, old, 0, b'\x00'))
        sio.actuate_output(self.node, A_DRIVER, 10,
                           seal_event(AES, self.key, 0, b'\x01'))
        self.assertEqual([r.value for r in
                          self.node.devices['A'].actuations()], [b'\x01'])

    def test_outputs_are_exclusive(self):
        with self.assertRaises(LeaseError):
            self.provider.acquire_lease('d1', 'np1', 'A', exclusive=False)

    def test_mmio_answers_its_driver_only(self):
        with self.assertRaises(CallerRejected):
            sio.mmio_access(self.node, 'A', 0, sio.VALUE_REGISTER, 'write',
                            b'\x01', 'attacker')
        with self.assertRaises(CallerRejected):
            sio.mmio_access(self.node, 'A', S1_DRIVER, sio.VALUE_REGISTER,
                            'write', b'\x01', 'attacker')
        sio.mmio_access(self.node, 'A', A_DRIVER, sio.VALUE_REGISTER,
                        'write', b'\x01', 'driver')
        self.assertEqual(self.node.devices['A'].value, b'\x01')
        with self.assertRaises(ValueError):
            sio.mmio_access(self.node, 'A', A_DRIVER, 0, 'poke')


class TestGrants(SecureIoTestCase):

    def test_grant_replay_refused(self):
        """a recorded grant never installs again"""
        nonce, blob, _ = self.grant('A', A_DRIVER, 9, self.key)
        for _ in range(1000):
            with self.assertRaises(NonceMismatch):
                sio.driver_set_exclusive(self.node, A_DRIVER, 9, nonce, blob)

    def test_forged_grant(self):
        nonce = sio.driver_get_nonce(self.node, A_DRIVER)
        blob = bytearray(self.provider.grant_exclusive('d1', 'np1', 'A',
                                                       nonce, self.key))
        blob[0] ^= 1
        with self.assertRaises(AuthFailure):
            sio.driver_set_exclusive(self.node, A_DRIVER, 9, nonce,
                                     bytes(blob))
        with self.assertRaises(LeaseError):
            sio.driver_set_exclusive(self.node, A_DRIVER, 9, nonce,
                                     bytes(blob[:-1]))

    def test_grant_blob_layout(self):
        """conn key sealed under the driver key, aad = nonce | flags"""
        driver_key = self.provider.driver_key('np1', 'A')
        nonce = sio.driver_get_nonce(self.node, A_DRIVER)
        blob = self.provider.grant_exclusive('d1', 'np1', 'A', nonce,
                                             self.key)
        cipher = CryptodomeAES.new(driver_key, CryptodomeAES.MODE_GCM,
                                   nonce=bytes(12), mac_len=16)
        cipher.update(nonce + bytes([sio.FLAG_EXCLUSIVE]))
        ciphertext, tag = cipher.encrypt_and_digest(self.key)
        self.assertEqual(blob, ciphertext + tag)

    def test_independently_sealed_grant(self):
        driver_key = self.provider.driver_key('np1', 'A')
        nonce = sio.driver_get_nonce(self.node, A_DRIVER)
        for key, accepted in ((b'\x33' * 16, False), (driver_key, True)):
            cipher = CryptodomeAES.new(key, CryptodomeAES.MODE_GCM,
                                       nonce=bytes(12), mac_len=16)
            cipher.update(nonce + bytes([sio.FLAG_EXCLUSIVE]))
            ciphertext, tag = cipher.encrypt_and_digest(self.key)
            if not accepted:
                with self.assertRaises(AuthFailure):
                    sio.driver_set_exclusive(self.node, A_DRIVER, 9, nonce,
                                             ciphertext + tag)
                continue
            confirmation = sio.driver_set_exclusive(
                self.node, A_DRIVER, 9, nonce, ciphertext + tag)
            self.assertTrue(sio.verify_confirmation(self.key, nonce,
                                                    confirmation))

    def test_one_grant_per_nonce(self):
        nonce = sio.driver_get_nonce(self.node, A_DRIVER)
        first = self.provider.grant_exclusive('d1', 'np1', 'A', nonce,
                                              self.key)
        self.assertEqual(self.provider.grant_exclusive('d1', 'np1', 'A',
                                                       nonce, self.key),
                         first)
        with self.assertRaises(LeaseError):
            self.provider.grant_exclusive('d1', 'np1', 'A', nonce,
                                          b'\x25' * 16)

    def test_lease_held_then_expired(self):
        self.provider.acquire_lease('d1', 'np1', 'A')
        with self.assertRaises(LeaseHeld):
            self.provider.acquire_lease('d2', 'np1', 'A')
        self.provider.acquire_lease('d1', 'np1', 'A')
        self.t = 10.5
        self.assertEqual(self.provider.active_leases('np1', 'A'), [])
        self.provider.acquire_lease('d2', 'np1', 'A')

    def test_release(self):
        self.grant('A', A_DRIVER, 9, self.key)
        with self.assertRaises(AuthFailure):
            sio.driver_release(self.node, A_DRIVER, 9, b'\x26' * 16)
        with self.assertRaises(ReleaseRejected):
            sio.driver_release(self.node, A_DRIVER, 9, self.key, seq=1)
        sio.driver_release(self.node, A_DRIVER, 9, self.key, 0,
                           self.provider, ('d1', 'np1', 'A'))
        self.assertEqual(self.provider.active_leases('np1', 'A'), [])
        sio.actuate_output(self.node, A_DRIVER, 9,
                           seal_event(AES, self.key, 0, b'\x00'))
        self.assertEqual(self.node.devices['A'].actuations(), [])
        with self.assertRaises(ReleaseRejected):
            sio.driver_release(self.node, A_DRIVER, 9, self.key)

    def test_reset_clears_grants(self):
        """a node reset reboots drivers; provider leases survive"""
        nonce, _, _ = self.grant('A', A_DRIVER, 9, self.key)
        self.node.reset()
        self.assertNotEqual(sio.driver_get_nonce(self.node, A_DRIVER),
                            nonce)
        sio.actuate_output(self.node, A_DRIVER, 9,
                           seal_event(AES, self.key, 0, b'\x00'))
        self.assertEqual(self.node.devices['A'].actuations(), [])
        self.assertEqual(len(self.provider.active_leases('np1', 'A')), 1)


class TestPhysicalLog(SecureIoTestCase):

    def test_export(self):
        self.t = 1.5
        sio.inject_physical_input(self.node, 'S1', b'\x07')
        lines = sio.export_physical_log([self.node])
        self.assertEqual(lines, ['1.500000, S1, input, 07, physical'])
        record = sio.parse_record(lines[0])
        self.assertEqual(record.value, b'\x07')
        self.assertEqual(record.ts, 1.5)


if __name__ == '__main__':
    unittest.main()
