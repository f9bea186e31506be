#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_cli
----------------------------------

Tests for `authex.cli` module.
"""

import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from authex import apps, cli
from authex.errors import LeaseHeld


class TestParser(unittest.TestCase):

    def setUp(self):
        self.parser = cli.build_parser()

    def test_deployer_commands(self):
        args = self.parser.parse_args(
            ['update', '--descriptor', 'app.json', '--node-config', 'a.ini',
             '--node-config', 'b.ini', '--module', 'FloA',
             '--transfer-state'])
        self.assertEqual(args.node_config, ['a.ini', 'b.ini'])
        self.assertEqual(args.state, cli.DEFAULT_STATE)
        self.assertTrue(args.transfer_state)
        self.assertIsNone(args.behavior)

    def test_update_sources(self):
        args = self.parser.parse_args(
            ['update', '--descriptor', 'app.json', '--module', 'FloA',
             '--package', 'floa.bin', '--attman', 'am:6000'])
        self.assertEqual((args.package, args.attman), ('floa.bin', 'am:6000'))
        with mock.patch('sys.stderr', new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                self.parser.parse_args(
                    ['update', '--descriptor', 'app.json', '--module',
                     'FloA', '--package', 'floa.bin',
                     '--behavior', 'FloActuator'])

    def test_bench_defaults(self):
        args = self.parser.parse_args(['bench', '--descriptor', 'x'])
        self.assertEqual((args.iterations, args.payload), (110, '0001'))

    def test_command_required(self):
        with mock.patch('sys.stderr', new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                self.parser.parse_args([])


class TestMain(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp, 'echo.yaml')
        with open(self.path, 'w') as f:
            f.write(apps.echo_descriptor().serialize('yaml'))

    def run_main(self, argv):
        with mock.patch('sys.stdout', new_callable=io.StringIO) as out:
            status = cli.main(argv)
        return status, out.getvalue()

    def test_bench_json(self):
        status, out = self.run_main(['bench', '--descriptor', self.path,
                                     '--route', 'echo', '--iterations', '2',
                                     '--json'])
        self.assertEqual(status, 0)
        report = json.loads(out)
        self.assertEqual(report['iterations'], 2)
        self.assertIn('RTT', report['rows'])

    def test_bench_update_table(self):
        status, out = self.run_main(['bench', '--descriptor', self.path,
                                     '--update', 'echo', '--iterations', '1'])
        self.assertEqual(status, 0)
        self.assertTrue(out.startswith('Update of echo'))

    def test_bad_descriptor(self):
        with open(self.path, 'w') as f:
            f.write('nodes: []\n')
        status, _ = self.run_main(['bench', '--descriptor', self.path,
                                   '--route', 'echo'])
        self.assertEqual(status, 1)

    @mock.patch('authex.cli.make_deployer')
    def test_send(self, make_deployer):
        deployer = make_deployer.return_value
        deployer.send_direct_event.return_value = b'\x01\x02'
        status, out = self.run_main(['send', '--descriptor', self.path,
                                     '--connection', 'echo',
                                     '--payload', '00ff'])
        self.assertEqual((status, out), (0, '0102\n'))
        deployer.send_direct_event.assert_called_once_with('echo',
                                                           b'\x00\xff')
        deployer.bootstrap_attman.assert_not_called()
        deployer.state.save.assert_called_once_with(cli.DEFAULT_STATE)
        deployer.network.close.assert_called_once_with()

    @mock.patch('authex.cli.make_deployer')
    def test_failure_saves_state(self, make_deployer):
        deployer = make_deployer.return_value
        deployer.cmd_connect.side_effect = LeaseHeld('nd/A is leased')
        status, _ = self.run_main(['connect', '--descriptor', self.path,
                                   '--attman', 'am', '--state', 's.json'])
        self.assertEqual(status, 1)
        deployer.bootstrap_attman.assert_called_once_with()
        deployer.state.save.assert_called_once_with('s.json')

    @mock.patch('authex.cli.make_deployer')
    def test_update_package(self, make_deployer):
        deployer = make_deployer.return_value
        deployer.cmd_update.return_value.to_dict.return_value = {'new_id': 3}
        package = apps.flo_descriptor().module('FloA').package().encode()
        path = os.path.join(self.tmp, 'floa.bin')
        with open(path, 'wb') as f:
            f.write(package)
        status, out = self.run_main(['update', '--descriptor', self.path,
                                     '--module', 'FloA', '--package', path,
                                     '--attman', 'am:6000'])
        self.assertEqual(status, 0)
        self.assertEqual(json.loads(out), {'new_id': 3})
        deployer.bootstrap_attman.assert_called_once_with()
        deployer.cmd_update.assert_called_once_with(
            'FloA', None, transfer_state=False, package=package)

    def tearDown(self):
        shutil.rmtree(self.tmp)


if __name__ == '__main__':
    unittest.main()
