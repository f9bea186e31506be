# -*- coding: utf-8 -*-
import json
from collections import OrderedDict

from authex.behaviors import Behavior, Transferable, register
from authex.descriptor import parse_descriptor


"""
This module contains the example applications and their descriptors.

Flo closes a water tap when a field floods: each sensor module waits for
a saturated moisture reading, then for MAX timer ticks, then reports.
Agg averages the two moisture sensors on a display. The smart-home set
wires a web front, a gateway, a temperature sensor, a thermostat and a
light switch.

Device values are single bytes; moisture and temperature are read from
the first byte of the payload.
"""

SATURATED = 80
MAX = 3

TAP_CLOSED = b'\x00'
TAP_OPEN = b'\x01'

HEAT_ON_BELOW = 18
HEAT_OFF_ABOVE = 22

# action payloads: target byte, value byte
LIGHTS = 0
HEATING = 1

STATUS_SIZE = 97


def _level(payload):
    return payload[0] if payload else 0


#
# Flo
#

@register('FloS1', 'FloS2', 'FloSensor')
class FloSensor(Behavior):
    """Reports once per flooding episode."""

    inputs = ('Moisture', 'Tick')
    outputs = ('Flooded',)

    def initial_state(self, init):
        return {'flooded': False, 'count': 0}

    def on_Moisture(self, ctx, payload):
        self.state['flooded'] = _level(payload) >= SATURATED
        self.state['count'] = 0

    def on_Tick(self, ctx, payload):
        if not self.state['flooded']:
            return
        self.state['count'] += 1
        if self.state['count'] == MAX:
            ctx.output('Flooded', b'\x01')


@register('FloA')
class FloActuator(Transferable, Behavior):

    inputs = ('Flooded', 'Reset', Transferable.RESTORE_INPUT)
    outputs = ('Tap', Transferable.TRANSFER_OUTPUT)
    entries = (Transferable.SAVE_ENTRY,)

    def initial_state(self, init):
        return {'closed': False}

    def on_Flooded(self, ctx, payload):
        if not self.state['closed']:
            self.state['closed'] = True
            ctx.output('Tap', TAP_CLOSED)

    def on_Reset(self, ctx, payload):
        if self.state['closed']:
            self.state['closed'] = False
            ctx.output('Tap', TAP_OPEN)


#
# Agg
#

@register('AggS1', 'AggS2', 'AggSensor')
class AggSensor(Behavior):

    inputs = ('Moisture',)
    outputs = ('Moist',)

    def on_Moisture(self, ctx, payload):
        ctx.output('Moist', bytes([_level(payload)]))


@register('Agg')
class Aggregator(Behavior):

    inputs = ('Moist1', 'Moist2')
    outputs = ('MoistChanged',)

    def initial_state(self, init):
        return {'m1': None, 'm2': None}

    def on_Moist1(self, ctx, payload):
        self._update(ctx, 'm1', payload)

    def on_Moist2(self, ctx, payload):
        self._update(ctx, 'm2', payload)

    def _update(self, ctx, slot, payload):
        self.state[slot] = _level(payload)
        if self.state['m1'] is None or self.state['m2'] is None:
            return
        ctx.output('MoistChanged',
                   bytes([(self.state['m1'] + self.state['m2']) // 2]))


@register('AggD')
class AggDisplay(Behavior):

    inputs = ('MoistChanged',)
    outputs = ('Display',)

    def initial_state(self, init):
        return {'shown': None}

    def on_MoistChanged(self, ctx, payload):
        level = _level(payload)
        if level != self.state['shown']:
            self.state['shown'] = level
            ctx.output('Display', bytes([level]))


#
# smart home
#

@register('TempSensor')
class TempSensor(Behavior):

    inputs = ('Reading',)
    outputs = ('Temperature',)

    def on_Reading(self, ctx, payload):
        ctx.output('Temperature', bytes([_level(payload)]))


@register('Gateway')
class Gateway(Transferable, Behavior):
    """
    Keeps the home status. Heating follows the temperature thresholds
    unless forced by a user action; light changes are confirmed by the
    light switch before the status is published.
    """

    inputs = ('Temperature', 'Action', 'LightsChanged',
              Transferable.RESTORE_INPUT)
    outputs = ('Heating', 'SetLights', 'Status',
               Transferable.TRANSFER_OUTPUT)
    handlers = ('Query',)
    entries = (Transferable.SAVE_ENTRY,)

    def initial_state(self, init):
        return {'temperature': None, 'heating': False, 'lights': False}

    def on_Temperature(self, ctx, payload):
        self.state['temperature'] = _level(payload)
        if self.state['temperature'] < HEAT_ON_BELOW:
            self._heating(ctx, True)
        elif self.state['temperature'] > HEAT_OFF_ABOVE:
            self._heating(ctx, False)

    def on_Action(self, ctx, payload):
        if len(payload) != 2:
            return
        target, value = payload[0], bool(payload[1])
        if target == LIGHTS:
            ctx.output('SetLights', bytes(payload))
        elif target == HEATING:
            self._heating(ctx, value)
            ctx.output('Status', self.status())

    def on_LightsChanged(self, ctx, payload):
        if len(payload) == 2:
            self.state['lights'] = bool(payload[1])
        ctx.output('Status', self.status())

    def on_Query(self, ctx, payload):
        return self.status()

    def status(self):
        text = json.dumps({'heating': self.state['heating'],
                           'lights': self.state['lights'],
                           'temperature': self.state['temperature']},
                          sort_keys=True)
        return text.ljust(STATUS_SIZE).encode()

    def _heating(self, ctx, on):
        if on != self.state['heating']:
            self.state['heating'] = on
            ctx.output('Heating', bytes([int(on)]))


@register('Thermostat')
class Thermostat(Behavior):

    inputs = ('Heating',)
    outputs = ('Heater',)

    def on_Heating(self, ctx, payload):
        ctx.output('Heater', bytes([1 if _level(payload) else 0]))


@register('LightSwitch')
class LightSwitch(Behavior):

    inputs = ('Toggle',)
    outputs = ('Light', 'Notify')

    def initial_state(self, init):
        return {'on': False}

    def on_Toggle(self, ctx, payload):
        if len(payload) != 2:
            return
        self.state['on'] = bool(payload[1])
        ctx.output('Light', bytes([int(self.state['on'])]))
        ctx.output('Notify', bytes(payload))


@register('Web')
class Web(Behavior):

    inputs = ('Control', 'Status')
    outputs = ('Action',)

    def initial_state(self, init):
        return {'status': None}

    def on_Control(self, ctx, payload):
        ctx.output('Action', bytes(payload))

    def on_Status(self, ctx, payload):
        self.state['status'] = payload.decode().strip()


#
# small modules
#

@register('Echo')
class Echo(Behavior):

    handlers = ('Echo',)

    def on_Echo(self, ctx, payload):
        return payload


@register('Ping')
class Ping(Behavior):
    """Asks an echo module on every Go event and reports the answer."""

    inputs = ('Go',)
    outputs = ('Done',)
    requests = ('Ask',)

    def on_Go(self, ctx, payload):
        ctx.output('Done', ctx.request('Ask', payload))


@register('Relay')
class Relay(Behavior):

    inputs = ('In',)
    outputs = ('Out',)

    def on_In(self, ctx, payload):
        ctx.output('Out', payload)


@register('Null')
class Null(Behavior):
    pass


#
# descriptors
#

def _node(name, flavor, devices=None, **extras):
    node = OrderedDict([('name', name), ('address', '%s:6000' % name),
                        ('flavor', flavor)])
    if devices:
        node['devices'] = OrderedDict(devices)
    node.update(extras)
    return node


def _module(name, node, behavior, vendor_id=1, **extras):
    module = OrderedDict([('name', name), ('node', node),
                          ('behavior', behavior), ('vendor_id', vendor_id)])
    module.update(extras)
    return module


def _connection(name, src, dest, **fields):
    connection = OrderedDict([('name', name), ('from', src), ('to', dest),
                              ('encryption', 'aes')])
    connection.update(fields)
    return connection


def flo_document():
    """Flo on three nodes of three flavors."""
    return OrderedDict([
        ('nodes', [
            _node('np1', 'sancus', [('S1', 'input'), ('T1', 'input')],
                  reactive_port=6000),
            _node('np2', 'trustzone', [('S2', 'input'), ('T2', 'input')],
                  ta_uuid='flo-field'),
            _node('nd', 'sgx-sim', [('A', 'output')], aesm_client=False),
        ]),
        ('modules', [
            _module('FloS1', 'np1', 'FloS1', vendor_id=4660),
            _module('FloS2', 'np2', 'FloS2', vendor_id=4660),
            _module('FloA', 'nd', 'FloA', vendor_id=4660),
        ]),
        ('connections', [
            _connection('s1-flo', 'device:S1', 'FloS1.Moisture'),
            _connection('t1-flo', 'device:T1', 'FloS1.Tick'),
            _connection('s2-flo', 'device:S2', 'FloS2.Moisture'),
            _connection('t2-flo', 'device:T2', 'FloS2.Tick'),
            _connection('flooded1', 'FloS1.Flooded', 'FloA.Flooded'),
            _connection('flooded2', 'FloS2.Flooded', 'FloA.Flooded'),
            _connection('tap', 'FloA.Tap', 'device:A'),
            _connection('reset', 'deployer', 'FloA.Reset', direct=True),
        ]),
    ])


def field_document():
    """Flo and Agg sharing the field sensors."""
    document = flo_document()
    document['nodes'][2]['devices']['D'] = 'output'
    document['nodes'].append(_node('nagg', 'sgx-sim'))
    document['modules'].extend([
        _module('AggS1', 'np1', 'AggS1', vendor_id=22136),
        _module('AggS2', 'np2', 'AggS2', vendor_id=22136),
        _module('Agg', 'nagg', 'Agg', vendor_id=22136),
        _module('AggD', 'nd', 'AggD', vendor_id=22136),
    ])
    for connection in document['connections']:
        if connection['from'] in ('device:S1', 'device:S2'):
            connection['access'] = 'shared'
    document['connections'].extend([
        _connection('s1-agg', 'device:S1', 'AggS1.Moisture',
                    access='shared'),
        _connection('s2-agg', 'device:S2', 'AggS2.Moisture',
                    access='shared'),
        _connection('moist1', 'AggS1.Moist', 'Agg.Moist1'),
        _connection('moist2', 'AggS2.Moist', 'Agg.Moist2'),
        _connection('changed', 'Agg.MoistChanged', 'AggD.MoistChanged'),
        _connection('display', 'AggD.Display', 'device:D'),
    ])
    return document


def smart_home_document(attman=False):
    document = OrderedDict([
        ('nodes', [
            _node('web', 'sgx-sim'),
            _node('gw', 'trustzone'),
            _node('temp', 'sancus', [('temp', 'input')]),
            _node('thermo', 'sancus', [('heater', 'output')]),
            _node('lights', 'sancus', [('led', 'output')]),
        ]),
        ('modules', [
            _module('web', 'web', 'Web'),
            _module('gateway', 'gw', 'Gateway'),
            _module('temp_sensor', 'temp', 'TempSensor'),
            _module('thermostat', 'thermo', 'Thermostat'),
            _module('light_switch', 'lights', 'LightSwitch'),
        ]),
        ('connections', [
            _connection('user-control', 'deployer', 'web.Control',
                        direct=True),
            _connection('status-query', 'deployer', 'gateway.Query',
                        direct=True),
            _connection('action', 'web.Action', 'gateway.Action'),
            _connection('set-lights', 'gateway.SetLights',
                        'light_switch.Toggle'),
            _connection('light', 'light_switch.Light', 'device:led'),
            _connection('notify', 'light_switch.Notify',
                        'gateway.LightsChanged'),
            _connection('status', 'gateway.Status', 'web.Status'),
            _connection('reading', 'device:temp', 'temp_sensor.Reading'),
            _connection('temperature', 'temp_sensor.Temperature',
                        'gateway.Temperature'),
            _connection('heating', 'gateway.Heating', 'thermostat.Heating'),
            _connection('heater', 'thermostat.Heater', 'device:heater'),
        ]),
    ])
    if attman:
        document['nodes'].append(_node('am', 'sgx-sim'))
        document['modules'].insert(0, _module('attman', 'am',
                                              'AttestationManager'))
        document['connections'].insert(0, _connection(
            'attman', 'deployer', 'attman.Command', direct=True))
    return document


def echo_document(loopback=False):
    """Ping and Echo on two nodes, or on one with `loopback`."""
    echo_node = 'n1' if loopback else 'n2'
    nodes = [_node('n1', 'sgx-sim')]
    if not loopback:
        nodes.append(_node('n2', 'trustzone'))
    return OrderedDict([
        ('nodes', nodes),
        ('modules', [
            _module('ping', 'n1', 'Ping'),
            _module('echo', echo_node, 'Echo'),
        ]),
        ('connections', [
            _connection('go', 'deployer', 'ping.Go', direct=True),
            _connection('ask', 'ping.Ask', 'echo.Echo'),
            _connection('echo', 'deployer', 'echo.Echo', direct=True),
        ]),
    ])


def flo_descriptor():
    return parse_descriptor(json.dumps(flo_document()))


def field_descriptor():
    return parse_descriptor(json.dumps(field_document()))


def smart_home_descriptor(attman=False):
    return parse_descriptor(json.dumps(smart_home_document(attman)))


def echo_descriptor(loopback=False):
    return parse_descriptor(json.dumps(echo_document(loopback)))


#
# input schedules: (time, target, value)
#

def flo_schedule(rounds=1, spacing=1.0):
    """
    Each round saturates S1 and ticks T1 MAX times, while S2 stays dry
    and ticks twice.
    """
    schedule = []
    for r in range(rounds):
        t = r * spacing
        schedule.append((t + 0.10, 'device:S1', bytes([SATURATED + 5])))
        schedule.append((t + 0.15, 'device:S2', bytes([SATURATED - 40])))
        for k in range(MAX):
            schedule.append((t + 0.20 + 0.1 * k, 'device:T1', b'\x01'))
        schedule.append((t + 0.25, 'device:T2', b'\x01'))
        schedule.append((t + 0.35, 'device:T2', b'\x01'))
    return schedule


def smart_home_schedule():
    return [
        (0.10, 'device:temp', bytes([15])),
        (0.30, 'user-control', bytes([LIGHTS, 1])),
        (0.60, 'device:temp', bytes([25])),
        (0.90, 'user-control', bytes([LIGHTS, 0])),
    ]
