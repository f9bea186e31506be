# -*- coding: utf-8 -*-
import argparse
import json
import os
import signal
import sys

from authex.bench import bench_rtt, bench_update
from authex.deployer import Deployer, DeploymentState
from authex.descriptor import load_descriptor
from authex.errors import AuthexError
from authex.event_manager import EventManager
from authex.log_utils import configure, init_logging
from authex.network import TcpNetwork
from authex.secure_io import InfrastructureProvider
from authex.tee_sim import Node, load_node_config


"""
Command line entry point.

    authex node --config node.ini
    authex deploy|attest|connect --descriptor app.json \
        --node-config n1.ini --node-config n2.ini [--state state.json]
    authex update --descriptor app.json --module name --package pkg.bin
    authex send --descriptor app.json --connection name --payload hex ...
    authex bench --descriptor app.json --route name [--until module.label]

Deployer commands talk to running nodes over TCP and keep their progress
in the state file. `bench` runs the whole deployment in-process on the
virtual network.
"""

logger = init_logging('cli')

DEFAULT_STATE = 'authex-state.json'


def build_parser():
    parser = argparse.ArgumentParser(
        prog='authex', description='authentic execution deployer and nodes')
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='debug logging')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    node = commands.add_parser('node', help='run a node event manager')
    node.add_argument('--config', required=True, metavar='INI')
    node.add_argument('--seed', type=int, default=None)

    for name in ('deploy', 'attest', 'connect', 'update', 'send'):
        cmd = commands.add_parser(name, help='%s the application' % name)
        _deployer_arguments(cmd)
        if name == 'update':
            cmd.add_argument('--module', required=True)
            source = cmd.add_mutually_exclusive_group()
            source.add_argument('--package', default=None, metavar='FILE',
                                help='encoded module package')
            source.add_argument('--behavior', default=None)
            cmd.add_argument('--transfer-state', action='store_true')
        elif name == 'send':
            cmd.add_argument('--connection', required=True)
            cmd.add_argument('--payload', default='', metavar='HEX')

    bench = commands.add_parser('bench', help='round-trip breakdown')
    bench.add_argument('--descriptor', required=True)
    bench.add_argument('--seed', type=int, default=0)
    bench.add_argument('--route', default=None,
                       help='direct connection to time')
    bench.add_argument('--until', default=None, metavar='MODULE.LABEL',
                       help='handler ending an event round trip')
    bench.add_argument('--update', default=None, metavar='MODULE',
                       help='time updates of a module instead')
    bench.add_argument('--iterations', type=int, default=110)
    bench.add_argument('--payload', default='0001', metavar='HEX')
    bench.add_argument('--json', action='store_true',
                       help='print the machine-readable report')
    return parser


def _deployer_arguments(cmd):
    cmd.add_argument('--descriptor', required=True)
    cmd.add_argument('--node-config', action='append', default=[],
                     metavar='INI', help='configuration of a target node')
    cmd.add_argument('--state', default=DEFAULT_STATE)
    cmd.add_argument('--seed', type=int, default=None)
    cmd.add_argument('--attman', default=None, metavar='ADDR',
                     help='address of the attestation manager node, or '
                          'the direct connection to it')
    cmd.add_argument('--address', default='127.0.0.1:7000',
                     help='where the deployer receives direct replies')


def run_node(args):
    config = load_node_config(args.config)
    network = TcpNetwork()
    node = Node(config, network.now, {'seed': args.seed})
    manager = EventManager(node, network)
    logger.info('node %s (%s) serving on %s', config.node_id,
                config.flavor.value, manager.address)
    try:
        signal.pause()
    except (KeyboardInterrupt, AttributeError):
        pass
    finally:
        network.close()
    return 0


def make_deployer(args):
    descriptor = load_descriptor(args.descriptor)
    network = TcpNetwork()
    provider = InfrastructureProvider(network.now)
    for path in args.node_config:
        provider.add_node(load_node_config(path))
    state = None
    if os.path.exists(args.state):
        state = DeploymentState.load(args.state)
    deployer = Deployer(descriptor, network, provider, state,
                        {'seed': args.seed, 'attman': args.attman,
                         'address': args.address})
    return deployer


def run_deployer(args):
    deployer = make_deployer(args)
    try:
        if args.attman is not None and args.command != 'deploy':
            deployer.bootstrap_attman()
        if args.command == 'deploy':
            deployer.cmd_deploy()
        elif args.command == 'attest':
            deployer.cmd_attest()
        elif args.command == 'connect':
            deployer.cmd_connect()
        elif args.command == 'update':
            package = None
            if args.package is not None:
                with open(args.package, 'rb') as f:
                    package = f.read()
            report = deployer.cmd_update(args.module, args.behavior,
                                         transfer_state=args.transfer_state,
                                         package=package)
            print(json.dumps(report.to_dict(), indent=2))
        elif args.command == 'send':
            reply = deployer.send_direct_event(args.connection,
                                               bytes.fromhex(args.payload))
            if reply is not None:
                print(reply.hex())
    finally:
        deployer.state.save(args.state)
        deployer.network.close()
    return 0


def run_bench(args):
    descriptor = load_descriptor(args.descriptor)
    if args.update is not None:
        report = bench_update(descriptor, args.update, args.iterations,
                              args.seed)
    else:
        if args.route is None:
            raise SystemExit('bench needs --route or --update')
        until = None
        if args.until is not None:
            until = tuple(args.until.split('.', 1))
        report = bench_rtt(descriptor, args.route, args.iterations,
                           bytes.fromhex(args.payload), until, args.seed)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_table())
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure(args.verbose)
    try:
        if args.command == 'node':
            return run_node(args)
        if args.command == 'bench':
            return run_bench(args)
        return run_deployer(args)
    except AuthexError as e:
        logger.error('%s: %s', e.__class__.__name__, e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
