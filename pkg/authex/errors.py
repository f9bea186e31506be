# -*- coding: utf-8 -*-
"""
Exception hierarchy shared by every authex module.

Errors are grouped by the layer raising them. Remote peers receive the
class name in Error frames, so names are part of the wire contract.
"""


class AuthexError(Exception):
    """Base class of all authex errors."""


#
# crypto
#

class CryptoError(AuthexError):
    pass


class UnsupportedCipher(CryptoError):
    pass


class InvalidKey(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


#
# enclave runtime
#

class ModuleError(AuthexError):
    pass


class UnknownBehavior(ModuleError):
    pass


class MalformedPackage(ModuleError):
    pass


class DuplicateIoId(MalformedPackage):
    pass


class StaleSequence(ModuleError):
    pass


class UnknownConnection(ModuleError):
    pass


class Unestablished(ModuleError):
    pass


class NonceExhausted(ModuleError):
    pass


class ChallengeTooShort(ModuleError):
    pass


class UnknownEntry(ModuleError):
    pass


class UnknownEndpoint(ModuleError):
    pass


class Timeout(ModuleError):
    pass


#
# tee simulation
#

class NodeError(AuthexError):
    pass


class UnknownVendor(NodeError):
    pass


class UnknownModule(NodeError):
    pass


class CapacityExceeded(NodeError):
    pass


class ConfigError(AuthexError):
    pass


#
# secure I/O
#

class SecureIoError(AuthexError):
    pass


class UnknownDriver(SecureIoError):
    pass


class UnknownDevice(SecureIoError):
    pass


class LeaseHeld(SecureIoError):
    pass


class LeaseError(SecureIoError):
    pass


class NonceMismatch(SecureIoError):
    pass


class CallerRejected(SecureIoError):
    pass


class ReleaseRejected(SecureIoError):
    pass


#
# wire and transport
#

class WireError(AuthexError):
    pass


class NodeUnreachable(AuthexError):
    pass


class RemoteError(AuthexError):
    """Error frame whose name does not map to a local class."""

    def __init__(self, name, message):
        super(RemoteError, self).__init__('%s: %s' % (name, message))
        self.name = name
        self.message = message


#
# deployer
#

class DeployerError(AuthexError):
    pass


class SchemaError(DeployerError):

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super(SchemaError, self).__init__('; '.join(self.violations))


class AttestationFailed(DeployerError):

    def __init__(self, modules, reason=''):
        if isinstance(modules, str):
            modules = [modules]
        self.modules = list(modules)
        self.reason = reason
        message = 'attestation failed for %s' % ', '.join(self.modules)
        if reason:
            message += ' (%s)' % reason
        super(AttestationFailed, self).__init__(message)


class SetKeyRejected(DeployerError):
    pass


class KeyMismatch(DeployerError):
    pass


class InvalidHandle(KeyMismatch):
    pass


class DeploymentError(DeployerError):
    """Several items of one command failed; `failures` maps item to reason."""

    def __init__(self, command, failures):
        self.command = command
        self.failures = dict(failures)
        items = ', '.join('%s (%s)' % (k, v)
                          for k, v in sorted(self.failures.items()))
        super(DeploymentError, self).__init__('%s failed for %s'
                                              % (command, items))


class ScenarioError(AuthexError):
    pass


def error_classes():
    """Maps class names to classes for decoding Error frames."""
    found = {}
    pending = [AuthexError]
    while pending:
        cls = pending.pop()
        found[cls.__name__] = cls
        pending.extend(cls.__subclasses__())
    return found
