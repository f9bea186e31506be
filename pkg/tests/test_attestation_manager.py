#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_attestation_manager
----------------------------------

Tests for `authex.attestation_manager` module.
"""

import unittest
from unittest import mock

from authex import apps
from authex.crypto_core import CipherSuite
from authex.deployer import Deployer
from authex.errors import (AttestationFailed, ConfigError, InvalidHandle,
                           KeyMismatch)
from authex.harness import Scenario


HOME = ('web', 'gateway', 'temp_sensor', 'thermostat', 'light_switch')


class TestAttestationManager(unittest.TestCase):

    def setUp(self):
        self.scenario = Scenario(apps.smart_home_descriptor(attman=True),
                                 seed=7)

    def deploy(self):
        return self.scenario.deploy({'attman': 'attman'})

    def test_keys_stay_with_the_manager(self):
        state = self.deploy().state
        self.assertIsNotNone(state.modules['attman']['key'])
        self.assertIsNone(state.modules['attman']['handle'])
        for name in HOME:
            self.assertIsNone(state.modules[name]['key'])
            self.assertEqual(len(state.modules[name]['handle']), 16)
        handles = [state.modules[name]['handle'] for name in HOME]
        self.assertEqual(len(set(handles)), len(HOME))
        self.assertTrue(all(state.established(c) for c in
                            self.scenario.descriptor.connections))

    def test_smart_home_runs(self):
        self.deploy()
        trace = self.scenario.run(apps.smart_home_schedule())
        self.assertEqual([v for _, _, v in trace.actuations('led')],
                         [b'\x01', b'\x00'])
        self.assertEqual([v for _, _, v in trace.actuations('heater')],
                         [b'\x01', b'\x00'])

    def test_handles(self):
        deployer = self.deploy()
        client = deployer.attman_client
        web = deployer.state.modules['web']['handle']
        body = client.seal_setkey(web, 'web', 40, 0, 0, bytes(range(16)),
                                  CipherSuite.AES_GCM_128)
        self.assertEqual(len(body), 6 + 16 + 16 + 1)
        with self.assertRaises(KeyMismatch) as ctx:
            client.seal_setkey(web, 'gateway', 40, 0, 0, bytes(range(16)),
                               CipherSuite.AES_GCM_128)
        self.assertNotIsInstance(ctx.exception, InvalidHandle)
        client.forget(web)
        with self.assertRaises(InvalidHandle):
            client.seal_setkey(web, 'web', 40, 0, 0, bytes(range(16)),
                               CipherSuite.AES_GCM_128)
        with self.assertRaises(InvalidHandle):
            client.forget('00' * 8)

    def test_manager_rejects_wrong_identity(self):
        deployer = Deployer(self.scenario.descriptor, self.scenario.network,
                            self.scenario.provider,
                            params={'seed': 7, 'attman': 'attman',
                                    'address': 'deployer:7000'})
        deployer.cmd_deploy()
        deployer.bootstrap_attman()
        with mock.patch.object(deployer, 'expected_identity',
                               return_value=bytes(16)):
            with self.assertRaises(AttestationFailed) as ctx:
                deployer.cmd_attest()
        self.assertEqual(ctx.exception.modules, list(HOME))
        self.assertEqual(deployer.state.modules['attman']['status'],
                         'attested')

    def test_manager_by_address(self):
        """the manager is found from its node address"""
        address = self.scenario.descriptor.node('am').address
        deployer = self.scenario.deploy({'attman': address})
        self.assertEqual(deployer.attman_client.connection, 'attman')
        self.assertIsNone(deployer.state.modules['web']['key'])
        with self.assertRaises(ConfigError):
            Deployer(self.scenario.descriptor, self.scenario.network,
                     self.scenario.provider,
                     params={'attman': 'nowhere:1'}).bootstrap_attman()

    def tearDown(self):
        pass


if __name__ == '__main__':
    unittest.main()
