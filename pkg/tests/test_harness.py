#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_harness
----------------------------------

Tests for `authex.harness` module.
"""

import json
import unittest

from authex import apps
from authex.errors import ConfigError, ScenarioError
from authex.harness import (AttackScript, CausalTrace, Scenario,
                            random_schedule, replay_frame, run_scenario)
from authex.network import Frame
from authex.wire import OP_LOAD_MODULE, OP_REMOTE_EVENT, encode_remote_event


def event_frame(i):
    return Frame('n1:6000', 'n2:6000', OP_REMOTE_EVENT,
                 encode_remote_event(1, 2, bytes([i % 256]) * 20))


class TestAttackScript(unittest.TestCase):

    def setUp(self):
        self.frames = [event_frame(i) for i in range(50)]

    def play(self, script):
        return [script(f, [(0.0, f)]) for f in self.frames]

    def test_deterministic(self):
        first, second = AttackScript(seed=9), AttackScript(seed=9)
        self.assertEqual(self.play(first), self.play(second))
        self.assertEqual(first.export_lines(), second.export_lines())
        third = AttackScript(seed=10)
        self.play(third)
        self.assertNotEqual(first.export_lines(), third.export_lines())

    def test_every_action_used(self):
        script = AttackScript(seed=1)
        for _ in range(10):
            self.play(script)
        self.assertEqual(set(r.action for r in script.log),
                         set(script.actions))

    def test_fixed_scripts(self):
        frame = self.frames[0]
        self.assertEqual(AttackScript.passthrough()(frame, [(0.0, frame)]),
                         [(0.0, frame)])
        self.assertEqual(AttackScript.drop_all()(frame, [(0.0, frame)]), [])

    def test_corrupt_keeps_header(self):
        script = AttackScript(2, {'weights': {'corrupt': 1.0}})
        for frame in self.frames:
            [(_, corrupted)] = script(frame, [(0.0, frame)])
            self.assertEqual(corrupted.body[:4], frame.body[:4])
            self.assertNotEqual(corrupted.body, frame.body)

    def test_unknown_action(self):
        with self.assertRaises(ConfigError):
            AttackScript(0, {'weights': {'pass': 1.0, 'delay': 1.0}})

    def tearDown(self):
        pass


class TestScenario(unittest.TestCase):

    def setUp(self):
        self.descriptor = apps.flo_descriptor()

    def test_replays_never_fire(self):
        """replayed frames are rejected by every module"""
        scenario = Scenario(self.descriptor, seed=4)
        scenario.deploy()
        scenario.schedule(random_schedule(self.descriptor, 50, seed=4))
        scenario.network.run()
        fires = len(scenario.trace.fires())
        captured = list(scenario.hostile.captured)
        self.assertGreaterEqual(len(captured), 50)
        replay_frame(scenario.network, captured[0], times=100)
        for frame in captured:
            replay_frame(scenario.network, frame)
        scenario.network.run()
        self.assertEqual(len(scenario.trace.fires()), fires)

    def test_trace(self):
        scenario = Scenario(self.descriptor, seed=4)
        scenario.deploy()
        trace = scenario.run(apps.flo_schedule())
        self.assertEqual(len(trace.inputs()), apps.MAX + 4)
        self.assertEqual(len(trace.actuations('A')), 1)
        fire = trace.fires('FloA')[0]
        self.assertEqual(fire.fields['label'], 'Flooded')
        self.assertTrue(all(line.startswith('ts=')
                            for line in trace.export_lines()))
        self.assertTrue(any(r.fields['opcode'] == 'RemoteEvent'
                            for r in trace.frames()))
        self.assertEqual(len(scenario.physical_log()), apps.MAX + 5)
        self.assertEqual(scenario.module_name('nd', 1), 'driver:A')

    def test_reproducible(self):
        runs = [run_scenario(self.descriptor, AttackScript(seed=6),
                             apps.flo_schedule(2), seed=6)
                for _ in range(2)]
        self.assertEqual(runs[0].export_lines(), runs[1].export_lines())

    def test_drop_all(self):
        trace = run_scenario(self.descriptor, AttackScript.drop_all(),
                             apps.flo_schedule())
        self.assertEqual(trace.actuations(), [])

    def test_descriptor_errors(self):
        document = apps.flo_document()
        document['modules'][0]['behavior'] = 'Teleport'
        with self.assertRaises(ScenarioError):
            run_scenario(json.dumps(document))
        with self.assertRaises(ScenarioError):
            random_schedule(apps.echo_descriptor(), 5)

    def test_only_events_are_attacked(self):
        scenario = Scenario(self.descriptor, seed=4)
        scenario.deploy()
        frame = Frame('x:1', 'np1:6000', OP_LOAD_MODULE, b'')
        self.assertEqual(scenario.hostile.intercept(frame, [(0.0, frame)]),
                         [(0.0, frame)])
        self.assertEqual(scenario.hostile.captured, [])

    def tearDown(self):
        pass


class TestCausalTrace(unittest.TestCase):

    def test_order(self):
        trace = CausalTrace()
        trace.append(0.2, 'input', source='device:S1', value=b'\x01')
        trace.append(0.1, 'input', source='device:T1', value=b'\x02')
        trace.append(0.2, 'actuation', device='A', value=b'\x00',
                     attribution='-')
        self.assertEqual([s for _, s, _ in trace.inputs()],
                         ['device:T1', 'device:S1'])
        self.assertEqual(trace.actuations('B'), [])
        self.assertEqual(len(trace), 3)
        self.assertEqual(trace.without_timestamps()[0][0], 'input')


if __name__ == '__main__':
    unittest.main()
