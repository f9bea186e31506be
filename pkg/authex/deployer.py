# -*- coding: utf-8 -*-
import copy
import json
import struct
import time
from collections import OrderedDict

from authex.behaviors import Transferable
from authex.crypto_core import (COUNTER_MAX, CipherSuite, RandomSource,
                                aead_seal, kdf128, key_fingerprint,
                                make_nonce, open_event, seal_event,
                                verify_tag)
from authex.descriptor import DEPLOYER, ModuleSpec
from authex.enclave_runtime import ENTRY_ATTEST, ENTRY_SET_KEY, REPLY_LABEL
from authex.errors import (AttestationFailed, AuthexError, AuthFailure,
                           ConfigError, DeploymentError, LeaseHeld,
                           NonceExhausted, SetKeyRejected, Timeout,
                           Unestablished, WireError)
from authex.event_manager import ManagerClient
from authex.log_utils import init_logging
from authex.module_package import ModulePackage
from authex.parameters_utils import set_parameters
from authex.secure_io import (driver_get_nonce, driver_release,
                              driver_set_exclusive, provider_grant_exclusive,
                              verify_confirmation)
from authex.tee_sim import Flavor, derive_module_key, placement_identity
from authex.wire import (OP_ERROR, OP_REMOTE_EVENT, decode_remote_event,
                         encode_error, encode_remote_event)


"""
This module contains the deployer: it loads the modules of a descriptor,
attests them, distributes connection keys and rewires connections when a
module is updated. Everything it learns is kept in a DeploymentState
that can be saved between commands.
"""

logger = init_logging('deployer')


def seal_setkey_body(module_key, conn_id, io_id, seq, conn_key, suite):
    """
    SetKey argument: conn_id | io_id | seq | ciphertext | tag | suite,
    the key sealed under the module key at counter `seq` with the first
    six bytes as associated data.
    """
    header = struct.pack('>HHH', conn_id, io_id, seq)
    ciphertext, tag = aead_seal(CipherSuite.AES_GCM_128, module_key,
                                make_nonce(seq), conn_key, header)
    return header + ciphertext + tag + bytes([int(suite)])


class DeploymentState(object):
    """
    Per-module and per-connection records of one deployment. Keys are
    stored hex encoded; the state file is as sensitive as the deployer.
    """

    def __init__(self):
        self.modules = OrderedDict()
        self.connections = OrderedDict()
        self.leases = OrderedDict()
        self.next_conn_id = 0
        self.key_history = []
        self.retired = []
        self.transcripts = OrderedDict()

    def __repr__(self):
        info = ''.join(self.__class__.__name__) + '\n'
        for name, record in self.modules.items():
            info += 'module %s : id=%s %s\n' % (name, record['module_id'],
                                                record['status'])
        for name, record in self.connections.items():
            info += 'connection %s : id=%d %s\n' % (
                name, record['conn_id'],
                'established' if record['established'] else 'down')
        return info

    def to_dict(self):
        return {
            'modules': copy.deepcopy(self.modules),
            'connections': copy.deepcopy(self.connections),
            'leases': copy.deepcopy(self.leases),
            'next_conn_id': self.next_conn_id,
            'key_history': list(self.key_history),
            'retired': copy.deepcopy(self.retired),
            'transcripts': copy.deepcopy(self.transcripts),
        }

    @classmethod
    def from_dict(cls, data):
        state = cls()
        state.modules = OrderedDict(data.get('modules', {}))
        state.connections = OrderedDict(data.get('connections', {}))
        state.leases = OrderedDict(data.get('leases', {}))
        state.next_conn_id = data.get('next_conn_id', 0)
        state.key_history = list(data.get('key_history', []))
        state.retired = list(data.get('retired', []))
        state.transcripts = OrderedDict(data.get('transcripts', {}))
        return state

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def established(self, name):
        record = self.connections.get(name)
        return record is not None and record['established']


class UpdateReport(object):
    """Outcome of cmd_update; times are on the network clock."""

    def __init__(self, module, old_id, new_id, conn_ids, timings, downtime):
        self.module = module
        self.old_id = old_id
        self.new_id = new_id
        self.conn_ids = conn_ids
        self.timings = timings
        self.downtime = downtime

    def to_dict(self):
        return OrderedDict([('module', self.module), ('old_id', self.old_id),
                            ('new_id', self.new_id),
                            ('conn_ids', list(self.conn_ids)),
                            ('timings', OrderedDict(self.timings)),
                            ('downtime', self.downtime)])

    def __repr__(self):
        return 'UpdateReport(%s %d -> %d, connections=%s, downtime=%.3f ms)' \
            % (self.module, self.old_id, self.new_id, self.conn_ids,
               self.downtime * 1000.0)


class _PendingReply(object):

    def __init__(self, counter, key, suite):
        self.counter = counter
        self.key = key
        self.suite = suite
        self.done = False
        self.reply = None


class Deployer(object):
    """
    **Parameters**

    descriptor : descriptor.Descriptor

    network : transport reaching the event managers

    provider : secure_io.InfrastructureProvider
        trusted in-process channel for vendor keys, quote verification
        and driver grants

    state : DeploymentState or None

    params : dict, optional
        'deployer_id' : str
        'address' : str
            where replies to direct requests are received
        'seed' : int or None
            reproducible keys and challenges
        'timeout' : float
            wait for direct replies
        'challenge_size' : int
        'settle_time' : float
            wait for the state-transfer event during updates
        'attman' : str or None
            direct connection to an attestation manager, or the address
            of the node running it
    """

    default_params = {
        'deployer_id': 'deployer',
        'address': 'deployer:7000',
        'seed': None,
        'timeout': 5.0,
        'challenge_size': 16,
        'settle_time': 0.05,
        'attman': None,
    }

    def __init__(self, descriptor, network, provider, state=None, params={}):
        set_parameters(self, self.default_params, params)
        self.descriptor = descriptor
        self.network = network
        self.provider = provider
        self.state = state if state is not None else DeploymentState()
        self.random = RandomSource(self.seed)
        self.vendor_keys = {}
        self.attman_client = None
        self._clients = {}
        self._pending = {}
        self._listening = False

    def __repr__(self):
        return 'Deployer(%s, %r)' % (self.deployer_id, self.descriptor)

    def client(self, node_name):
        client = self._clients.get(node_name)
        if client is None:
            node = self.descriptor.node(node_name)
            client = self._clients[node_name] = ManagerClient(
                self.network, node.address, src=self.address)
        return client

    def vendor_key(self, node_name, vendor_id):
        key = self.vendor_keys.get((node_name, vendor_id))
        if key is None:
            key = self.provider.vendor_key(node_name, vendor_id)
            self.vendor_keys[(node_name, vendor_id)] = key
        return key

    #
    # commands
    #

    def cmd_deploy(self):
        """
        Loads every module not loaded yet.

        Raises DeploymentError naming the modules that failed; the state
        keeps the modules that were loaded.
        """
        failures = OrderedDict()
        for spec in self.descriptor.modules.values():
            if spec.name in self.state.modules:
                continue
            try:
                self.state.modules[spec.name] = self.load(spec)
            except AuthexError as e:
                failures[spec.name] = '%s: %s' % (e.__class__.__name__, e)
                logger.warning('deploy of %s failed: %s', spec.name, e)
        if failures:
            raise DeploymentError('deploy', failures)
        return self.state

    def cmd_attest(self):
        """
        Attests every loaded module not attested yet. Raises
        AttestationFailed naming every module that failed, including
        modules that never loaded.
        """
        if self.attman is not None and self.attman_client is None:
            self.bootstrap_attman()
        failed = []
        reasons = []
        for spec in self.descriptor.modules.values():
            record = self.state.modules.get(spec.name)
            if record is None:
                failed.append(spec.name)
                reasons.append('%s not loaded' % spec.name)
                continue
            if record['status'] == 'attested':
                continue
            try:
                self.attest(spec, record)
            except AuthexError as e:
                failed.append(spec.name)
                reasons.append('%s: %s' % (spec.name, e))
                logger.warning('attestation of %s failed: %s', spec.name, e)
        if failed:
            raise AttestationFailed(failed, '; '.join(reasons))
        return self.state

    def cmd_connect(self):
        """
        Establishes every connection not established yet. Device leases
        are taken first; if any is held by someone else, the leases taken
        by this call are returned and LeaseHeld is raised.
        """
        pending = [c for c in self.descriptor.connections.values()
                   if not self.state.established(c.name)]
        acquired = []
        try:
            for conn in pending:
                for node_name, device_id in self._devices_of(conn):
                    lease_key = '%s/%s' % (node_name, device_id)
                    new = lease_key not in self.state.leases
                    self.provider.acquire_lease(self.deployer_id, node_name,
                                                device_id, conn.exclusive)
                    if new:
                        acquired.append((node_name, device_id))
                        self.state.leases[lease_key] = {
                            'node': node_name, 'device': device_id,
                            'exclusive': conn.exclusive, 'fingerprint': None}
        except LeaseHeld:
            for node_name, device_id in acquired:
                self.provider.close_lease(self.deployer_id, node_name,
                                          device_id)
                self.state.leases.pop('%s/%s' % (node_name, device_id), None)
            raise
        for conn in pending:
            self.establish(conn)
        return self.state

    def cmd_update(self, module_name, behavior=None, init=None,
                   vendor_id=None, transfer_state=False, package=None):
        """
        Replaces a module by a new instance, built from `package` (a
        ModulePackage or its encoding) when given, otherwise from the
        current descriptor entry with `behavior`, `init` and `vendor_id`
        overridden.

        1. deploy and attest the new instance; on failure it is unloaded
           and the old instance keeps serving
        2. deactivate the old instance
        3. re-establish every connection of the module under its old
           connection id with a fresh key

        **Returns**

        report : UpdateReport
        """
        old_spec = self.descriptor.module(module_name)
        old = self.state.modules.get(module_name)
        if old is None or old['status'] != 'attested':
            raise ConfigError('%s is not deployed and attested'
                              % module_name)
        build_start = time.perf_counter()
        if package is not None:
            new_spec = self._spec_from_package(old_spec, package)
        else:
            new_spec = ModuleSpec(
                module_name, old_spec.node, behavior or old_spec.behavior,
                old_spec.vendor_id if vendor_id is None else vendor_id,
                old_spec.init if init is None else init, old_spec.extras)
            new_spec.package().encode()
        build = time.perf_counter() - build_start
        if transfer_state and not all(
                issubclass(s.behavior_class(), Transferable)
                for s in (old_spec, new_spec)):
            raise ConfigError('%s cannot transfer its state' % module_name)
        timings = OrderedDict([('build', build)])
        start = mark = self.network.now()

        new = self.load(new_spec)
        timings['deploy'], mark = self._lap(mark)
        try:
            self.attest(new_spec, new)
        except AuthexError as e:
            self._deactivate(new_spec.node, new['module_id'])
            logger.warning('update of %s aborted: %s', module_name, e)
            if isinstance(e, AttestationFailed):
                raise
            raise AttestationFailed(module_name, str(e))
        timings['attest'], mark = self._lap(mark)

        if transfer_state:
            self._transfer_state(old_spec, old, new_spec, new)

        down = self.network.now()
        self._deactivate(old_spec.node, old['module_id'])
        retired = dict(old, name=module_name)
        self.state.retired.append(retired)
        self.state.modules[module_name] = new
        self.descriptor.modules[module_name] = new_spec
        touched = self.descriptor.connections_of(module_name)
        for conn in touched:
            self.establish(conn)
        up = self.network.now()
        timings['connect'], mark = self._lap(mark)
        timings['total'] = build + up - start
        report = UpdateReport(module_name, old['module_id'],
                              new['module_id'],
                              [self.state.connections[c.name]['conn_id']
                               for c in touched],
                              timings, up - down)
        logger.info('updated %r', report)
        return report

    def send_direct_event(self, name, payload, timeout=None):
        """
        Seals `payload` on a direct connection and sends it. Direct
        requests wait for the sealed reply.

        **Returns**

        reply : bytes or None
        """
        conn = self.descriptor.connection(name)
        record = self.state.connections.get(name)
        if not conn.direct:
            raise Unestablished('%s is not a direct connection' % name)
        if record is None or not record['established']:
            raise Unestablished('%s is not established' % name)
        counter = record['nonce']
        if counter >= COUNTER_MAX:
            raise NonceExhausted('%s used every nonce' % name)
        key = bytes.fromhex(record['key'])
        sealed = seal_event(conn.encryption, key, counter, payload)
        record['nonce'] = counter + 1
        node_name, module_id = self._locate(conn.dest)
        pending = None
        if conn.kind == 'request':
            self._listen()
            pending = _PendingReply(counter, key, conn.encryption)
            self._pending[record['conn_id']] = pending
        try:
            self.network.send(self.descriptor.node(node_name).address,
                              OP_REMOTE_EVENT,
                              encode_remote_event(module_id,
                                                  record['conn_id'], sealed),
                              src=self.address)
            if pending is None:
                return None
            self.network.wait_for(lambda: pending.done,
                                  self.timeout if timeout is None
                                  else timeout)
        finally:
            self._pending.pop(record['conn_id'], None)
        if not pending.done:
            raise Timeout('no reply on %s' % name)
        record['reply_nonce'] = counter + 1
        return pending.reply

    def release_device(self, name):
        """Gives a device connection back and closes its lease."""
        conn = self.descriptor.connection(name)
        record = self.state.connections.get(name)
        if record is None or not record['established']:
            raise Unestablished('%s is not established' % name)
        devices = self._devices_of(conn)
        if not devices:
            raise ConfigError('%s has no device endpoint' % name)
        for node_name, device_id in devices:
            binding = self.provider.binding(node_name, device_id)
            driver_release(self.client(node_name), binding.driver_id,
                           record['conn_id'], bytes.fromhex(record['key']),
                           record.get('release_seq', 0), self.provider,
                           (self.deployer_id, node_name, device_id))
            self.state.leases.pop('%s/%s' % (node_name, device_id), None)
        record['established'] = False

    #
    # building blocks
    #

    def load(self, spec):
        """Loads one module; returns its state record."""
        package = spec.package()
        module_id, identity = self.client(spec.node).load_module(
            package.encode())
        logger.info('%s loaded on %s as %d', spec.name, spec.node, module_id)
        return {
            'node': spec.node,
            'behavior': spec.behavior,
            'vendor_id': spec.vendor_id,
            'module_id': module_id,
            'identity': identity.hex(),
            'status': 'loaded',
            'key': None,
            'handle': None,
            'setkey_seq': 0,
        }

    def expected_identity(self, spec, module_id):
        package = spec.package()
        if self.provider.node_config(spec.node).measure_placement:
            return placement_identity(package.encode(), module_id)
        return package.identity()

    def attest(self, spec, record):
        """
        Challenges the module and derives its key. The identity is the
        one the deployer computes, never the one the node reports.
        """
        node = self.descriptor.node(spec.node)
        identity = self.expected_identity(spec, record['module_id'])
        if self.attman_client is not None and \
                spec.name != self.attman_client.module_name:
            record['handle'] = self.attman_client.attest(spec, node, record,
                                                         identity)
            record['status'] = 'attested'
            return record
        challenge = self.random.random_bytes(self.challenge_size)
        evidence = self.client(spec.node).call_entry(record['module_id'],
                                                     ENTRY_ATTEST, challenge)
        if node.flavor is Flavor.SGX:
            try:
                quoted, key = self.provider.verifier.verify(node.name,
                                                            evidence,
                                                            challenge)
            except AuthFailure as e:
                raise AttestationFailed(spec.name, str(e))
            if quoted != identity:
                raise AttestationFailed(spec.name, 'unexpected identity')
        else:
            key = derive_module_key(self.vendor_key(node.name,
                                                    spec.vendor_id),
                                    identity)
            if not verify_tag(key, challenge, evidence):
                raise AttestationFailed(spec.name, 'evidence does not verify')
        record['key'] = key.hex()
        record['status'] = 'attested'
        logger.info('%s attested', spec.name)
        return record

    def establish(self, conn):
        """
        Installs a fresh key on both ends of `conn`, then its routes.
        Re-establishing keeps the connection id.
        """
        record = self.state.connections.get(conn.name)
        if record is None:
            conn_id = self.state.next_conn_id
            self.state.next_conn_id += 1
        else:
            conn_id = record['conn_id']
        for ref in conn.endpoints():
            if ref.kind == 'module':
                module = self.state.modules.get(ref.module)
                if module is None or module['status'] != 'attested':
                    raise AttestationFailed(ref.module, 'not attested')
        key = self._fresh_key()
        transcript = []
        self._install(conn, conn.dest, conn_id, key, transcript)
        if conn.src.kind != DEPLOYER:
            self._install(conn, conn.src, conn_id, key, transcript)
        dest_node, dest_id = self._locate(conn.dest)
        dest_address = self.descriptor.node(dest_node).address
        if conn.src.kind == DEPLOYER:
            src_node, src_id, src_address = None, 0, self.address
        else:
            src_node, src_id = self._locate(conn.src)
            src_address = self.descriptor.node(src_node).address
            self.client(src_node).add_connection(conn_id, src_id,
                                                 dest_address, dest_id)
        if conn.kind == 'request':
            # replies travel back on the same connection id
            self.client(dest_node).add_connection(conn_id, dest_id,
                                                  src_address, src_id)
        self.state.connections[conn.name] = {
            'conn_id': conn_id,
            'key': key.hex(),
            'established': True,
            'nonce': 0,
            'reply_nonce': 0,
            'suite': int(conn.encryption),
            'kind': conn.kind,
            'direct': conn.direct,
            'release_seq': 0,
        }
        if transcript:
            self.state.transcripts[conn.name] = transcript
        logger.info('connection %s established as %d', conn.name, conn_id)
        return conn_id

    def bootstrap_attman(self):
        """
        Attests the attestation manager directly and connects to it;
        later attestations go through it.
        """
        from authex.attestation_manager import AttestationManagerClient
        conn = self._attman_connection()
        if conn.dest.kind != 'module' or conn.kind != 'request':
            raise ConfigError('%s must be a direct request connection'
                              % self.attman)
        spec = self.descriptor.module(conn.dest.module)
        record = self.state.modules.get(spec.name)
        if record is None:
            raise AttestationFailed(spec.name, 'not loaded')
        if record['status'] != 'attested':
            self.attest(spec, record)
        if not self.state.established(conn.name):
            self.establish(conn)
        self.attman_client = AttestationManagerClient(self, conn.name,
                                                      spec.name)
        return self.attman_client

    #
    # subfunctions
    #

    def _attman_connection(self):
        """Resolves the attman parameter, a connection name or address."""
        from authex.attestation_manager import AttestationManager
        if self.attman in self.descriptor.connections:
            return self.descriptor.connection(self.attman)
        for conn in self.descriptor.connections.values():
            if not conn.direct or conn.kind != 'request' or \
                    conn.dest.kind != 'module':
                continue
            spec = self.descriptor.module(conn.dest.module)
            if self.descriptor.node(spec.node).address == self.attman and \
                    issubclass(spec.behavior_class(), AttestationManager):
                return conn
        raise ConfigError('no attestation manager connection for %s'
                          % self.attman)

    def _spec_from_package(self, old_spec, package):
        if not isinstance(package, ModulePackage):
            package = ModulePackage.parse(bytes(package))
        spec = ModuleSpec(old_spec.name, old_spec.node, package.name,
                          package.vendor_id, package.init, old_spec.extras)
        if spec.package().encode() != package.encode():
            raise ConfigError('package does not match behavior %s'
                              % package.name)
        return spec

    def _lap(self, mark):
        now = self.network.now()
        return now - mark, now

    def _fresh_key(self):
        while True:
            key = self.random.random_key()
            fingerprint = key_fingerprint(key)
            if fingerprint not in self.state.key_history:
                self.state.key_history.append(fingerprint)
                return key

    def _locate(self, ref):
        """(node name, module id) of a module or device endpoint."""
        if ref.kind == 'module':
            record = self.state.modules[ref.module]
            return record['node'], record['module_id']
        if ref.kind == 'device':
            node = self.descriptor.device_node(ref.device)
            binding = self.provider.binding(node.name, ref.device)
            return node.name, binding.driver_id
        raise ConfigError('the deployer has no location')

    def _devices_of(self, conn):
        devices = []
        for ref in conn.endpoints():
            if ref.kind == 'device':
                node = self.descriptor.device_node(ref.device)
                devices.append((node.name, ref.device))
        return devices

    def _install(self, conn, ref, conn_id, key, transcript):
        if ref.kind == 'module':
            self._set_key(conn, ref, conn_id, key)
        elif ref.kind == 'device':
            self._grant(conn, ref, conn_id, key, transcript)

    def _set_key(self, conn, ref, conn_id, key):
        spec = self.descriptor.module(ref.module)
        record = self.state.modules[ref.module]
        io_id = spec.package().endpoint(ref.label).io_id
        seq = record['setkey_seq']
        if record.get('handle'):
            body = self.attman_client.seal_setkey(record['handle'],
                                                  ref.module, conn_id, io_id,
                                                  seq, key, conn.encryption)
        else:
            body = seal_setkey_body(bytes.fromhex(record['key']), conn_id,
                                    io_id, seq, key, conn.encryption)
        try:
            self.client(spec.node).call_entry(record['module_id'],
                                              ENTRY_SET_KEY, body)
        except AuthexError as e:
            raise SetKeyRejected('%s refused %s: %s: %s'
                                 % (ref.module, conn.name,
                                    e.__class__.__name__, e))
        record['setkey_seq'] = seq + 1

    def _grant(self, conn, ref, conn_id, key, transcript):
        node_name, driver_id = self._locate(ref)
        client = self.client(node_name)
        exclusive = conn.exclusive
        try:
            nonce = driver_get_nonce(client, driver_id)
            transcript.append({'step': 'nonce', 'nonce': nonce.hex()})
            blob = provider_grant_exclusive(self.provider, self.deployer_id,
                                            node_name, ref.device, nonce,
                                            key, exclusive)
            transcript.append({'step': 'grant', 'size': len(blob)})
            confirmation = driver_set_exclusive(client, driver_id, conn_id,
                                                nonce, blob, exclusive)
        except LeaseHeld:
            raise
        except AuthexError as e:
            raise SetKeyRejected('driver of %s refused %s: %s: %s'
                                 % (ref.device, conn.name,
                                    e.__class__.__name__, e))
        if not verify_confirmation(key, nonce, confirmation):
            raise SetKeyRejected('driver of %s sent a bad confirmation'
                                 % ref.device)
        transcript.append({'step': 'confirm',
                           'confirmation': confirmation.hex()})
        lease_key = '%s/%s' % (node_name, ref.device)
        self.state.leases[lease_key] = {
            'node': node_name, 'device': ref.device, 'exclusive': exclusive,
            'fingerprint': key_fingerprint(key)}

    def _deactivate(self, node_name, module_id):
        try:
            self.client(node_name).unload_module(module_id)
        except AuthexError as e:
            logger.warning('could not unload %d on %s: %s', module_id,
                           node_name, e)

    def _transfer_state(self, old_spec, old, new_spec, new):
        """
        Moves the old instance's state through a temporary connection
        from its transfer output to the new instance's restore input.
        """
        old_cls = old_spec.behavior_class()
        conn_id = self.state.next_conn_id
        self.state.next_conn_id += 1
        key = self._fresh_key()
        client = self.client(old_spec.node)
        pairs = ((old_spec, old, Transferable.TRANSFER_OUTPUT),
                 (new_spec, new, Transferable.RESTORE_INPUT))
        for spec, record, label in pairs:
            io_id = spec.package().endpoint(label).io_id
            seq = record['setkey_seq']
            if record.get('handle'):
                body = self.attman_client.seal_setkey(
                    record['handle'], spec.name, conn_id, io_id, seq, key,
                    CipherSuite.AES_GCM_128)
            else:
                body = seal_setkey_body(bytes.fromhex(record['key']),
                                        conn_id, io_id, seq, key,
                                        CipherSuite.AES_GCM_128)
            client.call_entry(record['module_id'], ENTRY_SET_KEY, body)
            record['setkey_seq'] = seq + 1
        address = self.descriptor.node(old_spec.node).address
        client.add_connection(conn_id, old['module_id'], address,
                              new['module_id'])
        save = old_cls.entry_ids()[Transferable.SAVE_ENTRY]
        client.call_entry(old['module_id'], save)
        self.network.wait_for(lambda: False, self.settle_time)
        logger.info('state of %s transferred on connection %d',
                    old_spec.name, conn_id)

    def _listen(self):
        if not self._listening:
            self.network.register(self.address, self._on_frame)
            self._listening = True

    def _on_frame(self, opcode, body):
        if opcode != OP_REMOTE_EVENT:
            return OP_ERROR, encode_error(
                WireError('the deployer only takes events'))
        try:
            _, conn_id, data = decode_remote_event(body)
        except WireError:
            return None
        pending = self._pending.get(conn_id)
        if pending is None or pending.done:
            logger.debug('unexpected reply on %d dropped', conn_id)
            return None
        try:
            pending.reply = open_event(pending.suite,
                                       kdf128(pending.key, REPLY_LABEL),
                                       pending.counter, data)
        except AuthFailure:
            logger.debug('reply on %d does not verify', conn_id)
            return None
        pending.done = True
        self.network.notify()
        return None
