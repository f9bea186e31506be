#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_oracle
----------------------------------

Tests for `authex.oracle` module.
"""

import struct
import unittest
from unittest import mock

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from authex import apps
from authex.harness import (AttackScript, CausalTrace, Scenario,
                            run_scenario)
from authex.network import Frame
from authex.oracle import (lease_fingerprints, verify_attribution,
                           verify_authenticity)
from authex.wire import encode_remote_event
from tests import FULL_CORPUS


ATTACK_SCRIPTS = 1000 if FULL_CORPUS else 25

FLOODING = [(0.10, 'device:S1', bytes([apps.SATURATED + 5]))] + \
    [(0.20 + 0.1 * k, 'device:T1', b'\x01') for k in range(apps.MAX)]


def unchecked_open(suite, key, nonce, ciphertext, tag, aad):
    """AES-GCM decryption that never looks at the tag."""
    decryptor = Cipher(algorithms.AES(bytes(key)),
                       modes.CTR(bytes(nonce) + b'\x00\x00\x00\x02')
                       ).decryptor()
    return decryptor.update(bytes(ciphertext)) + decryptor.finalize()


def flo_trace(inputs, actuations):
    trace = CausalTrace()
    for ts, source, value in inputs:
        trace.append(ts, 'input', source=source, value=value)
    for ts, device, value in actuations:
        trace.append(ts, 'actuation', device=device, value=value,
                     attribution='-')
    return trace


class TestVerdicts(unittest.TestCase):

    def setUp(self):
        self.descriptor = apps.flo_descriptor()

    def test_explained(self):
        trace = flo_trace(FLOODING, [(1.0, 'A', apps.TAP_CLOSED)])
        verdict = verify_authenticity(trace, self.descriptor)
        self.assertTrue(verdict.ok)
        self.assertFalse(verdict.inconclusive)
        self.assertGreater(verdict.explored, 0)

    def test_lost_events_explain_silence(self):
        trace = flo_trace(FLOODING, [])
        self.assertTrue(verify_authenticity(trace, self.descriptor))

    def test_unexplained(self):
        trace = flo_trace(FLOODING[:-1], [(1.0, 'A', apps.TAP_CLOSED)])
        verdict = verify_authenticity(trace, self.descriptor)
        self.assertFalse(verdict.ok)
        self.assertIn('actuation 0 of A (value 00)', verdict.violations[0])
        trace = flo_trace(FLOODING, [(1.0, 'A', apps.TAP_CLOSED),
                                     (1.1, 'A', apps.TAP_CLOSED)])
        self.assertFalse(verify_authenticity(trace, self.descriptor))

    def test_undriven_device(self):
        trace = flo_trace(FLOODING, [(1.0, 'S1', b'\x00')])
        verdict = verify_authenticity(trace, self.descriptor)
        self.assertIn('no connection drives', verdict.violations[0])

    def test_global_ordering(self):
        """ticks recorded before the flood only count per device"""
        inputs = [(0.1 * (k + 1), 'device:T1', b'\x01')
                  for k in range(apps.MAX)]
        inputs.append((1.0, 'device:S1', bytes([apps.SATURATED])))
        trace = flo_trace(inputs, [(2.0, 'A', apps.TAP_CLOSED)])
        self.assertTrue(verify_authenticity(trace, self.descriptor,
                                            'per-device'))
        self.assertFalse(verify_authenticity(trace, self.descriptor,
                                             'global'))
        with self.assertRaises(ValueError):
            verify_authenticity(trace, self.descriptor, 'causal')

    def test_direct_inputs(self):
        inputs = FLOODING + [(1.0, 'reset', b'')]
        trace = flo_trace(inputs, [(0.9, 'A', apps.TAP_CLOSED),
                                   (1.1, 'A', apps.TAP_OPEN)])
        self.assertTrue(verify_authenticity(trace, self.descriptor))
        trace = flo_trace(FLOODING, [(0.9, 'A', apps.TAP_CLOSED),
                                     (1.1, 'A', apps.TAP_OPEN)])
        self.assertFalse(verify_authenticity(trace, self.descriptor))

    def test_module_requests(self):
        """a lost request explains a missing reply"""
        descriptor = apps.echo_descriptor()
        trace = flo_trace([(0.1, 'go', b'x')], [])
        self.assertTrue(verify_authenticity(trace, descriptor))

    def test_budget(self):
        trace = flo_trace(FLOODING, [(1.0, 'A', apps.TAP_CLOSED)])
        verdict = verify_authenticity(trace, self.descriptor, max_states=2)
        self.assertTrue(verdict.inconclusive)
        self.assertFalse(verdict.ok)
        self.assertFalse(verdict)

    def test_budget_never_passes_unexplained(self):
        trace = flo_trace(FLOODING[:-1], [(1.0, 'A', apps.TAP_CLOSED)])
        for max_states in (1, 5, 200000):
            verdict = verify_authenticity(trace, self.descriptor,
                                          max_states=max_states)
            self.assertFalse(verdict.ok, max_states)

    def test_inputs_after_actuation(self):
        late = [(ts + 100.0, source, value)
                for ts, source, value in FLOODING]
        trace = flo_trace(late, [(0.01, 'A', apps.TAP_CLOSED)])
        verdict = verify_authenticity(trace, self.descriptor)
        self.assertFalse(verdict.ok)
        self.assertFalse(verdict.inconclusive)
        self.assertIn('actuation 0 of A', verdict.violations[0])
        trace = flo_trace(late, [(101.0, 'A', apps.TAP_CLOSED)])
        self.assertTrue(verify_authenticity(trace, self.descriptor))

    def test_input_at_actuation_time(self):
        trace = flo_trace(FLOODING, [(FLOODING[-1][0], 'A',
                                      apps.TAP_CLOSED)])
        self.assertTrue(verify_authenticity(trace, self.descriptor))

    def tearDown(self):
        pass


class TestRuns(unittest.TestCase):

    def test_benign(self):
        for descriptor, schedule in (
                (apps.flo_descriptor(), apps.flo_schedule(2)),
                (apps.smart_home_descriptor(), apps.smart_home_schedule())):
            scenario = Scenario(descriptor, seed=2)
            deployer = scenario.deploy()
            trace = scenario.run(schedule)
            self.assertTrue(trace.actuations())
            verdict = verify_authenticity(trace, descriptor)
            self.assertTrue(verdict.ok)
            self.assertFalse(verdict.inconclusive)
            self.assertEqual(verify_attribution(
                trace, lease_fingerprints(deployer.state)), [])
            self.assertTrue(verify_attribution(trace, {}))

    def test_attack_scripts(self):
        for descriptor, schedule in (
                (apps.flo_descriptor(), apps.flo_schedule(2)),
                (apps.smart_home_descriptor(), apps.smart_home_schedule())):
            actuating = 0
            for seed in range(ATTACK_SCRIPTS):
                trace = run_scenario(descriptor, AttackScript(seed),
                                     schedule, seed=seed)
                verdict = verify_authenticity(trace, descriptor)
                self.assertTrue(verdict.ok, (seed, verdict.violations))
                self.assertFalse(verdict.inconclusive, seed)
                if trace.actuations():
                    actuating += 1
            self.assertGreater(actuating, 0)

    def tearDown(self):
        pass


class TestNegativeControl(unittest.TestCase):
    """
    A forged tick, accepted by a runtime that skips tag checks, closes
    the tap without a flood being recorded.
    """

    def setUp(self):
        self.descriptor = apps.flo_descriptor()
        self.scenario = Scenario(self.descriptor, seed=1)
        self.deployer = self.scenario.deploy()
        self.scenario.schedule(FLOODING[:-1])
        self.scenario.network.run()

    def forge_tick(self):
        conn_id = self.deployer.state.connections['t1-flo']['conn_id']
        for frame in self.scenario.hostile.captured:
            dest, conn = struct.unpack('>HH', frame.body[:4])
            if conn == conn_id:
                break
        forged = Frame(frame.src, frame.dest, frame.opcode,
                       encode_remote_event(dest, conn, bytes(17)))
        self.scenario.network.send(forged.dest, forged.opcode, forged.body,
                                   src=forged.src)
        self.scenario.network.run()
        return self.scenario.run()

    def test_forgery_rejected(self):
        trace = self.forge_tick()
        self.assertEqual(trace.actuations(), [])
        self.assertTrue(verify_authenticity(trace, self.descriptor))

    def test_unchecked_tags_are_caught(self):
        with mock.patch('authex.enclave_runtime.aead_open',
                        side_effect=unchecked_open):
            trace = self.forge_tick()
        self.assertEqual([v for _, _, v in trace.actuations('A')],
                         [apps.TAP_CLOSED])
        verdict = verify_authenticity(trace, self.descriptor)
        self.assertGreaterEqual(len(verdict.violations), 1)

    def tearDown(self):
        pass


if __name__ == '__main__':
    unittest.main()
