#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_deployer
----------------------------------

Tests for `authex.deployer` module.
"""

import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from authex import apps
from authex.crypto_core import CipherSuite, seal_event
from authex.deployer import Deployer, DeploymentState
from authex.errors import (AttestationFailed, CapacityExceeded, ConfigError,
                           DeploymentError, LeaseHeld, Unestablished)
from authex.event_manager import ManagerClient
from authex.harness import Scenario
from authex.module_package import ModulePackage
from authex.wire import OP_REMOTE_EVENT, encode_remote_event
from tests import FULL_CORPUS


PERTURBATIONS = 64 if FULL_CORPUS else 8


def tap_values(scenario):
    device = scenario.node_for_device('A').devices['A']
    return [r.value for r in device.actuations()]


class TestDeploy(unittest.TestCase):

    def setUp(self):
        self.scenario = Scenario(apps.flo_descriptor(), seed=3)

    def test_three_phases(self):
        deployer = self.scenario.deploy()
        state = deployer.state
        self.assertEqual(set(r['status'] for r in state.modules.values()),
                         {'attested'})
        self.assertEqual(sorted(r['conn_id'] for r in
                                state.connections.values()), list(range(8)))
        self.assertTrue(all(deployer.state.established(name)
                            for name in state.connections))
        self.assertEqual(sorted(state.leases),
                         ['nd/A', 'np1/S1', 'np1/T1', 'np2/S2', 'np2/T2'])
        self.assertTrue(state.leases['nd/A']['exclusive'])
        self.assertFalse(state.leases['np1/S1']['exclusive'])
        self.assertEqual(len(state.key_history), 8)
        self.assertEqual([s['step'] for s in state.transcripts['tap']],
                         ['nonce', 'grant', 'confirm'])

    def test_commands_are_idempotent(self):
        deployer = self.scenario.deploy()
        before = deployer.state.to_dict()
        deployer.cmd_deploy()
        deployer.cmd_attest()
        deployer.cmd_connect()
        self.assertEqual(deployer.state.to_dict(), before)

    def test_flo_closes_the_tap(self):
        self.scenario.deploy()
        trace = self.scenario.run(apps.flo_schedule(rounds=2))
        self.assertEqual([v for _, _, v in trace.actuations('A')],
                         [apps.TAP_CLOSED])

    def test_partial_deploy(self):
        """a failed load is reported and retried by the next deploy"""
        deployer = Deployer(self.scenario.descriptor, self.scenario.network,
                            self.scenario.provider, params={'seed': 3})
        real_load = ManagerClient.load_module

        def refuse_np2(client, package):
            if client.address == 'np2:6000':
                raise CapacityExceeded('node is full')
            return real_load(client, package)

        with mock.patch.object(ManagerClient, 'load_module', autospec=True,
                               side_effect=refuse_np2):
            with self.assertRaises(DeploymentError) as ctx:
                deployer.cmd_deploy()
        self.assertEqual(list(ctx.exception.failures), ['FloS2'])
        self.assertEqual(list(deployer.state.modules), ['FloS1', 'FloA'])
        with self.assertRaises(AttestationFailed) as ctx:
            deployer.cmd_attest()
        self.assertEqual(ctx.exception.modules, ['FloS2'])
        deployer.cmd_deploy()
        deployer.cmd_attest()
        self.assertEqual(len(deployer.state.modules), 3)

    def test_wrong_identity(self):
        deployer = Deployer(self.scenario.descriptor, self.scenario.network,
                            self.scenario.provider, params={'seed': 3})
        deployer.cmd_deploy()
        with mock.patch.object(deployer, 'expected_identity',
                               return_value=bytes(16)):
            with self.assertRaises(AttestationFailed) as ctx:
                deployer.cmd_attest()
        self.assertEqual(ctx.exception.modules, ['FloS1', 'FloS2', 'FloA'])
        self.assertTrue(all(r['status'] == 'loaded'
                            for r in deployer.state.modules.values()))
        with self.assertRaises(AttestationFailed):
            deployer.cmd_connect()

    def test_perturbed_packages(self):
        """a flipped package bit fails that module and only that module"""
        rng = np.random.default_rng(0)
        real_load = ManagerClient.load_module
        for name in ('FloS1', 'FloS2', 'FloA'):
            spec = self.scenario.descriptor.module(name)
            address = self.scenario.descriptor.node(spec.node).address
            size = len(spec.package().encode()) * 8
            for position in rng.choice(size, PERTURBATIONS, replace=False):
                position = int(position)

                def flip(client, package):
                    if client.address == address:
                        package = bytearray(package)
                        package[position // 8] ^= 1 << (position % 8)
                    return real_load(client, bytes(package))

                scenario = Scenario(apps.flo_descriptor(), seed=3)
                deployer = Deployer(scenario.descriptor, scenario.network,
                                    scenario.provider, params={'seed': 3})
                with mock.patch.object(ManagerClient, 'load_module',
                                       autospec=True, side_effect=flip):
                    try:
                        deployer.cmd_deploy()
                    except DeploymentError:
                        pass
                with self.assertRaises(AttestationFailed) as ctx:
                    deployer.cmd_attest()
                self.assertEqual(ctx.exception.modules, [name],
                                 (name, position))

    def test_lease_held(self):
        self.scenario.deploy()
        other = Deployer(self.scenario.descriptor, self.scenario.network,
                         self.scenario.provider,
                         params={'deployer_id': 'other',
                                 'address': 'other:7000'})
        with self.assertRaises(LeaseHeld):
            other.cmd_connect()
        self.assertEqual(dict(other.state.leases), {})
        self.scenario.provider.acquire_lease('third', 'np1', 'S1', False)

    def tearDown(self):
        pass


class TestDirect(unittest.TestCase):

    def setUp(self):
        self.scenario = Scenario(apps.echo_descriptor(), seed=5)
        self.deployer = self.scenario.deploy()
        self.tmp = tempfile.mkdtemp()

    def test_echo_request(self):
        self.assertEqual(self.deployer.send_direct_event('echo', b'hello'),
                         b'hello')
        record = self.deployer.state.connections['echo']
        self.assertEqual((record['nonce'], record['reply_nonce']), (1, 1))
        self.assertEqual(self.deployer.send_direct_event('echo', b''), b'')

    def test_event_has_no_reply(self):
        self.assertIsNone(self.deployer.send_direct_event('go', b'x'))
        self.assertEqual(self.deployer.state.connections['go']['nonce'], 1)

    def test_not_direct(self):
        with self.assertRaises(Unestablished):
            self.deployer.send_direct_event('ask', b'x')

    def test_state_file(self):
        """nonces survive between commands"""
        self.deployer.send_direct_event('echo', b'1')
        path = os.path.join(self.tmp, 'state.json')
        self.deployer.state.save(path)
        state = DeploymentState.load(path)
        self.assertEqual(state.to_dict(), self.deployer.state.to_dict())
        again = Deployer(self.scenario.descriptor, self.scenario.network,
                         self.scenario.provider, state,
                         {'address': 'deployer:7000', 'seed': 9})
        self.assertEqual(again.send_direct_event('echo', b'2'), b'2')
        self.assertEqual(state.connections['echo']['nonce'], 2)

    def tearDown(self):
        shutil.rmtree(self.tmp)


class TestUpdate(unittest.TestCase):

    def setUp(self):
        self.scenario = Scenario(apps.flo_descriptor(), seed=11)
        self.deployer = self.scenario.deploy()

    def test_report(self):
        state = self.deployer.state
        old_ids = dict((n, r['conn_id'])
                       for n, r in state.connections.items())
        old_id = state.modules['FloA']['module_id']
        report = self.deployer.cmd_update('FloA')
        self.assertEqual(report.old_id, old_id)
        self.assertNotEqual(report.new_id, old_id)
        self.assertEqual(sorted(report.conn_ids),
                         sorted(old_ids[n] for n in
                                ('flooded1', 'flooded2', 'tap', 'reset')))
        self.assertEqual(list(report.timings),
                         ['build', 'deploy', 'attest', 'connect', 'total'])
        self.assertGreater(report.timings['total'], 0.0)
        self.assertTrue(0.0 < report.downtime <= report.timings['total'])
        self.assertEqual(state.retired[0]['module_id'], old_id)
        self.assertEqual(state.next_conn_id, 8)
        self.assertEqual(len(set(state.key_history)), 12)

    def test_update_keeps_serving(self):
        self.deployer.cmd_update('FloA')
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario), [apps.TAP_CLOSED])

    def test_transfer_state(self):
        """a closed tap stays closed across the update"""
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        self.deployer.cmd_update('FloA', transfer_state=True)
        self.deployer.send_direct_event('reset', b'')
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario),
                         [apps.TAP_CLOSED, apps.TAP_OPEN])

    def test_old_keys_rejected(self):
        """events sealed under a replaced key never fire"""
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        record = self.deployer.state.connections['reset']
        old_key = bytes.fromhex(record['key'])
        self.deployer.cmd_update('FloA', transfer_state=True)
        new_id = self.deployer.state.modules['FloA']['module_id']
        address = self.scenario.descriptor.node('nd').address
        for counter in range(3):
            sealed = seal_event(CipherSuite.AES_GCM_128, old_key, counter,
                                b'')
            self.scenario.network.send(
                address, OP_REMOTE_EVENT,
                encode_remote_event(new_id, record['conn_id'], sealed))
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario), [apps.TAP_CLOSED])
        self.deployer.send_direct_event('reset', b'')
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario),
                         [apps.TAP_CLOSED, apps.TAP_OPEN])

    def test_fresh_instance_forgets(self):
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        self.deployer.cmd_update('FloA')
        self.deployer.send_direct_event('reset', b'')
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario), [apps.TAP_CLOSED])

    def test_failed_update(self):
        """the old instance keeps serving when the new one fails"""
        old = dict(self.deployer.state.modules['FloA'])
        with mock.patch.object(self.deployer, 'expected_identity',
                               return_value=bytes(16)):
            with self.assertRaises(AttestationFailed):
                self.deployer.cmd_update('FloA')
        self.assertEqual(self.deployer.state.modules['FloA'], old)
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario), [apps.TAP_CLOSED])

    def test_update_from_package(self):
        spec = self.deployer.descriptor.module('FloA')
        old_id = self.deployer.state.modules['FloA']['module_id']
        report = self.deployer.cmd_update(
            'FloA', package=spec.package().encode())
        self.assertNotEqual(report.new_id, old_id)
        self.assertGreater(report.timings['build'], 0.0)
        self.scenario.schedule(apps.flo_schedule())
        self.scenario.network.run()
        self.assertEqual(tap_values(self.scenario), [apps.TAP_CLOSED])

    def test_mismatched_package(self):
        package = self.deployer.descriptor.module('FloA').package()
        other = ModulePackage(package.name, package.vendor_id,
                              package.inputs[1:], package.outputs,
                              package.requests, package.handlers,
                              package.init)
        old = dict(self.deployer.state.modules['FloA'])
        with self.assertRaises(ConfigError):
            self.deployer.cmd_update('FloA', package=other.encode())
        self.assertEqual(self.deployer.state.modules['FloA'], old)

    def test_not_transferable(self):
        with self.assertRaises(ConfigError):
            self.deployer.cmd_update('FloS1', transfer_state=True)
        with self.assertRaises(ConfigError):
            self.deployer.cmd_update('nope')

    def test_release_device(self):
        self.deployer.release_device('tap')
        self.assertFalse(self.deployer.state.established('tap'))
        self.assertNotIn('nd/A', self.deployer.state.leases)
        self.scenario.provider.acquire_lease('other', 'nd', 'A')
        with self.assertRaises(Unestablished):
            self.deployer.release_device('tap')
        with self.assertRaises(ConfigError):
            self.deployer.release_device('flooded1')

    def tearDown(self):
        pass


class TestKeyConfinement(unittest.TestCase):
    """
    Module, connection and driver keys never show up outside the
    enclaves that hold them.
    """

    def setUp(self):
        self.scenario = Scenario(apps.flo_descriptor(), seed=4)
        self.wire = []
        self.scenario.network.observers.append(
            lambda ts, frame: self.wire.append(frame.body))
        with self.assertLogs('authex', 'DEBUG') as logs:
            self.deployer = self.scenario.deploy()
            self.trace = self.scenario.run(apps.flo_schedule(1))
        self.logs = '\n'.join(logs.output)
        state = self.deployer.state
        self.module_keys = [bytes.fromhex(r['key'])
                            for r in state.modules.values()]
        self.conn_keys = [bytes.fromhex(r['key'])
                          for r in state.connections.values()]
        provider = self.scenario.provider
        self.driver_keys = [
            provider.driver_key(node.name, device)
            for node in self.scenario.descriptor.nodes.values()
            for device in node.devices]

    def secrets(self):
        return self.module_keys + self.conn_keys + self.driver_keys

    def assertConfined(self, blob, keys, what):
        for key in keys:
            self.assertNotIn(key, blob, what)
            self.assertNotIn(key.hex().encode(), blob, what)

    def test_keys_off_the_wire(self):
        self.assertGreater(len(self.wire), 0)
        for body in self.wire:
            self.assertConfined(body, self.secrets(), 'wire frame')

    def test_keys_out_of_logs_and_trace(self):
        text = (self.logs + '\n'.join(self.trace.export_lines())).encode()
        self.assertConfined(text, self.secrets(), 'logs and trace')

    def test_keys_out_of_event_managers(self):
        for manager in self.scenario.managers.values():
            blob = repr((manager.routes, manager.queues, manager.frame_log,
                         dict(manager.dropped))).encode()
            for body in [s for q in manager.queues.values() for s in q]:
                self.assertConfined(bytes(body), self.secrets(), 'queue')
            self.assertConfined(blob, self.secrets(), 'event manager')

    def test_keys_out_of_other_modules(self):
        for node in self.scenario.nodes.values():
            for module_id, module in node.modules.items():
                blob = json.dumps(module.behavior.state,
                                  sort_keys=True).encode()
                self.assertConfined(blob, self.module_keys + self.driver_keys,
                                    module.name)
                if not node.is_boot_module(module_id):
                    self.assertConfined(blob, self.conn_keys, module.name)

    def tearDown(self):
        pass



if __name__ == '__main__':
    unittest.main()
