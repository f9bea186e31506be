# -*- coding: utf-8 -*-
import time
from collections import OrderedDict

import numpy as np
from scipy import stats

from authex.errors import ConfigError, Timeout, Unestablished
from authex.harness import Scenario
from authex.log_utils import init_logging
from authex.profiling import Profiler, profiling
from authex.tee_sim import Flavor


"""
This module contains the benchmark reporters: the round-trip breakdown
of a direct route and the timing of module updates.

Crypto, secure I/O and the remaining host work are measured on the wall
clock; host/enclave crossings are counted and charged a simulated cost
per flavor; network delay is read from the virtual clock. Absolute
values depend on the machine and are not comparable with hardware
measurements.
"""

logger = init_logging('bench')

RTT_ROWS = ('aes instructions', 'spongent HW instructions',
            'spongent SW instructions', 'Host-enclave boundary',
            'Secure I/O', 'Network delay', 'Other')
UPDATE_ROWS = ('Build', 'Deploy', 'Attest', 'Connect')

# simulated seconds per host/enclave crossing
DEFAULT_BOUNDARY_COST = {
    Flavor.SANCUS.value: 0.0005,
    Flavor.TRUSTZONE.value: 0.002,
    Flavor.SGX.value: 0.0002,
}


class BenchReport(object):
    """
    Per-row samples of a benchmark, in seconds.

    **Parameters**

    title : str

    rows : OrderedDict
        row name -> list of samples

    total_row : str
        name of the row holding the per-iteration sum
    """

    def __init__(self, title, rows, total_row, extra=None):
        self.title = title
        self.rows = rows
        self.total_row = total_row
        self.extra = dict(extra or {})
        self.not_comparable = True

    @property
    def iterations(self):
        return len(self.rows[self.total_row])

    def mean(self, row):
        return float(np.mean(self.rows[row])) if self.rows[row] else 0.0

    def sem(self, row):
        if len(self.rows[row]) < 2:
            return 0.0
        return float(stats.sem(self.rows[row]))

    @property
    def total(self):
        return self.mean(self.total_row)

    def component_sum(self):
        return sum(self.mean(r) for r in self.rows if r != self.total_row)

    def to_dict(self):
        rows = OrderedDict()
        total = self.total
        for row in self.rows:
            mean = self.mean(row)
            rows[row] = OrderedDict([
                ('ms', mean * 1000.0),
                ('sem_ms', self.sem(row) * 1000.0),
                ('percent', 100.0 * mean / total if total else 0.0)])
        data = OrderedDict([('title', self.title),
                            ('iterations', self.iterations),
                            ('not_comparable', self.not_comparable),
                            ('rows', rows)])
        data.update(sorted(self.extra.items()))
        return data

    def format_table(self):
        width = max(len(r) for r in self.rows) + 2
        lines = [self.title,
                 '%-*s %12s %10s %10s' % (width, 'Operation', 'Time (ms)',
                                          'SEM (ms)', '% of total')]
        for row, values in self.to_dict()['rows'].items():
            if row == self.total_row:
                lines.append('-' * (width + 35))
            lines.append('%-*s %12.3f %10.3f %10.2f' % (
                width, row, values['ms'], values['sem_ms'],
                values['percent']))
        lines.append('(%d iterations, simulated: not comparable with '
                     'hardware measurements)' % self.iterations)
        return '\n'.join(lines)

    def __repr__(self):
        return self.format_table()


def bench_rtt(descriptor, route, iterations=110, payload=b'\x00\x01',
              until=None, seed=0, params={}):
    """
    Round-trip breakdown of a direct connection.

    **Parameters**

    descriptor : descriptor.Descriptor

    route : str
        direct connection; for a request connection the round trip ends
        with the reply

    iterations : int

    payload : bytes

    until : (module, label) or None
        for an event connection, the handler whose firing ends the round
        trip

    params : dict, optional
        Scenario parameters plus
        'boundary_cost' : dict
            flavor -> simulated seconds per crossing
        'timeout' : float

    **Returns**

    report : BenchReport
        rows RTT_ROWS then 'RTT'
    """
    params = dict(params)
    boundary_cost = dict(DEFAULT_BOUNDARY_COST)
    boundary_cost.update(params.pop('boundary_cost', {}) or {})
    timeout = params.pop('timeout', 5.0)
    conn = descriptor.connection(route)
    if not conn.direct:
        raise Unestablished('%s is not a direct connection' % route)
    if conn.kind == 'event' and until is None:
        raise ConfigError('event routes need the handler ending the trip')
    scenario = Scenario(descriptor, seed, params=params)
    deployer = scenario.deploy()
    if not deployer.state.established(route):
        raise Unestablished('%s is not established' % route)
    fired = []

    def on_fire(node, module, label, data):
        name = scenario.module_name(node.node_id, module.module_id)
        if (name, label) == until:
            fired.append(data)

    for node in scenario.nodes.values():
        node.fire_hooks.append(on_fire)
    rows = OrderedDict((r, []) for r in RTT_ROWS + ('RTT',))
    for _ in range(iterations):
        del fired[:]
        profiler = Profiler()
        net_start = scenario.network.now()
        wall_start = time.perf_counter()
        with profiling(profiler):
            deployer.send_direct_event(route, payload, timeout)
            if conn.kind == 'event' and \
                    not scenario.network.wait_for(lambda: fired, timeout):
                raise Timeout('%s.%s never fired' % until)
        wall = time.perf_counter() - wall_start
        network = scenario.network.now() - net_start
        boundary = sum(profiler.count('boundary:%s' % flavor) * cost
                       for flavor, cost in boundary_cost.items())
        aes = profiler.total('aes')
        spongent = profiler.total('spongent')
        secure_io = profiler.total('secure_io')
        rtt = wall + network + boundary
        sample = OrderedDict([
            ('aes instructions', aes),
            ('spongent HW instructions', 0.0),
            ('spongent SW instructions', spongent),
            ('Host-enclave boundary', boundary),
            ('Secure I/O', secure_io),
            ('Network delay', network),
            ('Other', max(wall - aes - spongent - secure_io, 0.0)),
        ])
        sample['RTT'] = rtt
        for row, value in sample.items():
            rows[row].append(value)
    report = BenchReport('RTT of %s' % route, rows, 'RTT',
                         {'route': route})
    logger.info('rtt of %s: %.3f ms over %d iterations', route,
                report.total * 1000.0, iterations)
    return report


def bench_update(descriptor, module_name, iterations=10, seed=0,
                 params={}):
    """
    Timing of repeated updates of one module to an identical package.
    Build is measured on the wall clock, the other rows on the network
    clock.

    **Returns**

    report : BenchReport
        rows UPDATE_ROWS then 'Total', plus the mean downtime in
        `extra['downtime_ms']`
    """
    scenario = Scenario(descriptor, seed, params=params)
    deployer = scenario.deploy()
    rows = OrderedDict((r, []) for r in UPDATE_ROWS + ('Total',))
    downtime = []
    for _ in range(iterations):
        report = deployer.cmd_update(module_name)
        for row in UPDATE_ROWS:
            rows[row].append(report.timings[row.lower()])
        rows['Total'].append(report.timings['total'])
        downtime.append(report.downtime)
    return BenchReport('Update of %s' % module_name, rows, 'Total',
                       {'module': module_name,
                        'downtime_ms': float(np.mean(downtime)) * 1000.0})
