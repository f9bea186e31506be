# -*- coding: utf-8 -*-
import json

from authex.behaviors import Behavior, register
from authex.crypto_core import CipherSuite, verify_tag
from authex.enclave_runtime import ENTRY_ATTEST
from authex.errors import (AttestationFailed, AuthexError, InvalidHandle,
                           KeyMismatch, RemoteError,
                           error_classes)
from authex.log_utils import init_logging
from authex.tee_sim import (Flavor, VerificationService, derive_module_key)
from authex.wire import OP_CALL_ENTRY, check_reply, encode_call_entry


"""
This module contains the attestation manager, a module that attests
other modules on the deployer's behalf and keeps their keys. The
deployer refers to a module key by an opaque handle and asks the
manager to seal SetKey arguments with it.

Commands are JSON documents sent on a direct request connection:

    {"op": "attest", "module": ..., "address": ..., "module_id": ...,
     "identity": hex, "flavor": ..., "material": hex, "challenge_size": n}
    {"op": "setkey", "handle": ..., "module": ..., "conn_id": ...,
     "io_id": ..., "seq": ..., "key": hex, "suite": n}
    {"op": "forget", "handle": ...}

Sancus and trustzone targets are verified with the vendor key given as
`material`; sgx-sim targets get the platform root, which stands in for
a quote verification service.
"""

logger = init_logging('attestation_manager')

HANDLE_BYTES = 8


@register('AttestationManager')
class AttestationManager(Behavior):

    handlers = ('Command',)

    def initial_state(self, init):
        return {'handles': {}}

    def on_Command(self, ctx, payload):
        try:
            command = json.loads(payload.decode())
            op = command['op']
            if op == 'attest':
                result = self.attest(ctx, command)
            elif op == 'setkey':
                result = self.setkey(command)
            elif op == 'forget':
                self.lookup(command['handle'], None)
                del self.state['handles'][command['handle']]
                result = {}
            else:
                raise KeyMismatch('unknown command %r' % (op,))
        except AuthexError as e:
            result = {'error': e.__class__.__name__, 'message': str(e)}
        except (ValueError, KeyError, TypeError) as e:
            result = {'error': 'MalformedPackage', 'message': str(e)}
        return json.dumps(result, sort_keys=True).encode()

    def attest(self, ctx, command):
        name = command['module']
        identity = bytes.fromhex(command['identity'])
        material = bytes.fromhex(command['material'])
        challenge = ctx.random_bytes(command.get('challenge_size', 16))
        opcode, body = ctx.untrusted_request(
            command['address'], OP_CALL_ENTRY,
            encode_call_entry(command['module_id'], ENTRY_ATTEST, challenge))
        try:
            evidence = check_reply(opcode, body)
        except AuthexError as e:
            raise AttestationFailed(name, str(e))
        if Flavor.parse(command['flavor']) is Flavor.SGX:
            verifier = VerificationService()
            verifier.register_platform(command['node'], material)
            try:
                quoted, key = verifier.verify(command['node'], evidence,
                                              challenge)
            except AuthexError as e:
                raise AttestationFailed(name, str(e))
            if quoted != identity:
                raise AttestationFailed(name, 'unexpected identity')
        else:
            key = derive_module_key(material, identity)
            if not verify_tag(key, challenge, evidence):
                raise AttestationFailed(name, 'evidence does not verify')
        handle = ctx.random_bytes(HANDLE_BYTES).hex()
        self.state['handles'][handle] = {'module': name, 'key': key.hex()}
        return {'handle': handle}

    def setkey(self, command):
        # deferred: deployer imports this module lazily
        from authex.deployer import seal_setkey_body
        key = self.lookup(command['handle'], command['module'])
        body = seal_setkey_body(key, command['conn_id'], command['io_id'],
                                command['seq'], bytes.fromhex(command['key']),
                                CipherSuite(command['suite']))
        return {'body': body.hex()}

    def lookup(self, handle, module):
        record = self.state['handles'].get(handle)
        if record is None:
            raise InvalidHandle('unknown handle %s' % handle)
        if module is not None and record['module'] != module:
            raise KeyMismatch('handle %s belongs to %s, not %s'
                              % (handle, record['module'], module))
        return bytes.fromhex(record['key'])


class AttestationManagerClient(object):
    """
    Deployer-side stub of the attestation manager.

    **Parameters**

    deployer : deployer.Deployer

    connection : str
        direct request connection to the manager

    module_name : str
        the manager's own module
    """

    def __init__(self, deployer, connection, module_name):
        self.deployer = deployer
        self.connection = connection
        self.module_name = module_name

    def __repr__(self):
        return 'AttestationManagerClient(%s)' % self.connection

    def command(self, **fields):
        reply = self.deployer.send_direct_event(
            self.connection, json.dumps(fields, sort_keys=True).encode())
        result = json.loads(reply.decode())
        if 'error' in result:
            name, message = result['error'], result.get('message', '')
            if name == 'AttestationFailed':
                raise AttestationFailed(fields.get('module', ''), message)
            cls = error_classes().get(name)
            if cls in (KeyMismatch, InvalidHandle):
                raise cls(message)
            raise RemoteError(name, message)
        return result

    def attest(self, spec, node, record, identity):
        """**Returns** the handle of the attested module key."""
        provider = self.deployer.provider
        if node.flavor is Flavor.SGX:
            material = provider.node_config(node.name).root_key
        else:
            material = self.deployer.vendor_key(node.name, spec.vendor_id)
        result = self.command(op='attest', module=spec.name, node=node.name,
                              address=node.address,
                              module_id=record['module_id'],
                              identity=identity.hex(),
                              flavor=node.flavor.value,
                              material=material.hex(),
                              challenge_size=self.deployer.challenge_size)
        logger.info('%s attested by the manager', spec.name)
        return result['handle']

    def seal_setkey(self, handle, module, conn_id, io_id, seq, key, suite):
        result = self.command(op='setkey', handle=handle, module=module,
                              conn_id=conn_id, io_id=io_id, seq=seq,
                              key=key.hex(), suite=int(suite))
        return bytes.fromhex(result['body'])

    def forget(self, handle):
        self.command(op='forget', handle=handle)
