# -*- coding: utf-8 -*-
import enum
import hashlib
import hmac
import secrets
import struct

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from authex import profiling
from authex.errors import AuthFailure, InvalidKey, UnsupportedCipher


"""
This module contains the cryptographic primitives shared by all other
authex modules: authenticated encryption, key derivation, MAC tags
and randomness.

Nonces are 12 bytes: 10 zero bytes followed by a 16-bit big-endian
counter. Callers bind the same counter into the associated data.
"""

KEY_SIZE = 16
TAG_SIZE = 16
NONCE_SIZE = 12
COUNTER_MAX = 0xFFFF
ZERO_KEY = bytes(KEY_SIZE)


class CipherSuite(enum.IntEnum):
    AES_GCM_128 = 0
    SPONGENT_128 = 1

    @classmethod
    def from_name(cls, name):
        """Accepts 'aes', 'spongent', the enum name or the numeric id."""
        if isinstance(name, CipherSuite):
            return name
        if isinstance(name, int) and not isinstance(name, bool):
            try:
                return cls(name)
            except ValueError:
                raise UnsupportedCipher('unknown cipher suite %d' % name)
        aliases = {
            'aes': cls.AES_GCM_128,
            'aes-gcm-128': cls.AES_GCM_128,
            'aes_gcm_128': cls.AES_GCM_128,
            'spongent': cls.SPONGENT_128,
            'spongent-128': cls.SPONGENT_128,
            'spongent_128': cls.SPONGENT_128,
        }
        try:
            return aliases[str(name).lower()]
        except KeyError:
            raise UnsupportedCipher('unknown cipher suite %r' % (name,))


class _AesGcm128(object):

    def seal(self, key, nonce, plaintext, aad):
        sealed = AESGCM(key).encrypt(nonce, plaintext, aad)
        return sealed[:-TAG_SIZE], sealed[-TAG_SIZE:]

    def open(self, key, nonce, ciphertext, tag, aad):
        try:
            return AESGCM(key).decrypt(nonce, ciphertext + tag, aad)
        except InvalidTag:
            raise AuthFailure('tag mismatch')


# SPONGENT-128 is a slot only; register_suite() can fill it.
_suites = {
    CipherSuite.AES_GCM_128: _AesGcm128(),
}


def register_suite(suite, implementation):
    """
    Installs a cipher implementation exposing seal(key, nonce, pt, aad)
    -> (ct, tag) and open(key, nonce, ct, tag, aad) -> pt.
    """
    _suites[CipherSuite.from_name(suite)] = implementation


def unregister_suite(suite):
    suite = CipherSuite.from_name(suite)
    if suite == CipherSuite.AES_GCM_128:
        raise ValueError('AES-GCM-128 cannot be removed')
    _suites.pop(suite, None)


def is_supported(suite):
    try:
        return CipherSuite.from_name(suite) in _suites
    except UnsupportedCipher:
        return False


def _implementation(suite):
    suite = CipherSuite.from_name(suite)
    try:
        return _suites[suite]
    except KeyError:
        raise UnsupportedCipher('%s is not implemented' % suite.name)


def check_key(key):
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise InvalidKey('keys are %d bytes' % KEY_SIZE)
    if bytes(key) == ZERO_KEY:
        raise InvalidKey('the all-zero key means unset')
    return bytes(key)


def is_unset(key):
    return key is None or bytes(key) == ZERO_KEY


def make_nonce(counter):
    """
    **Parameters**

    counter : int
        value in [0, 65535]

    **Returns**

    nonce : bytes
        10 zero bytes followed by the big-endian counter
    """
    if not 0 <= counter <= COUNTER_MAX:
        raise ValueError('nonce counter out of range: %r' % (counter,))
    return bytes(NONCE_SIZE - 2) + struct.pack('>H', counter)


def counter_aad(counter):
    return struct.pack('>H', counter)


def aead_seal(suite, key, nonce, plaintext, aad):
    """
    Authenticated encryption.

    **Parameters**

    suite : CipherSuite

    key : bytes
        16 bytes, not all zero

    nonce : bytes
        12 bytes, see make_nonce()

    plaintext, aad : bytes

    **Returns**

    (ciphertext, tag) : (bytes, bytes)
        |ciphertext| == |plaintext|, |tag| == 16
    """
    implementation = _implementation(suite)
    key = check_key(key)
    if len(nonce) != NONCE_SIZE:
        raise ValueError('nonces are %d bytes' % NONCE_SIZE)
    with profiling.measure(_category(suite)):
        return implementation.seal(key, bytes(nonce), bytes(plaintext),
                                   bytes(aad))


def aead_open(suite, key, nonce, ciphertext, tag, aad):
    """
    Inverse of aead_seal; raises AuthFailure unless every input verifies.
    """
    implementation = _implementation(suite)
    key = check_key(key)
    if len(nonce) != NONCE_SIZE:
        raise ValueError('nonces are %d bytes' % NONCE_SIZE)
    if len(tag) != TAG_SIZE:
        raise AuthFailure('truncated tag')
    with profiling.measure(_category(suite)):
        return implementation.open(key, bytes(nonce), bytes(ciphertext),
                                   bytes(tag), bytes(aad))


def _category(suite):
    return 'aes' if suite == CipherSuite.AES_GCM_128 else 'spongent'


def seal_event(suite, key, counter, payload):
    """Seals one event at `counter`; returns ciphertext || tag."""
    ciphertext, tag = aead_seal(suite, key, make_nonce(counter), payload,
                                counter_aad(counter))
    return ciphertext + tag


def open_event(suite, key, counter, data):
    if len(data) < TAG_SIZE:
        raise AuthFailure('event shorter than a tag')
    return aead_open(suite, key, make_nonce(counter), data[:-TAG_SIZE],
                     data[-TAG_SIZE:], counter_aad(counter))


def kdf128(parent, data):
    """
    First 16 bytes of SHA-256(parent || data).
    """
    if not parent:
        raise ValueError('kdf128 needs a non-empty parent')
    return hashlib.sha256(bytes(parent) + bytes(data)).digest()[:KEY_SIZE]


def mac_tag(key, data):
    """
    Tag of an AES-GCM-128 seal of the empty plaintext under the
    zero-counter nonce, with `data` as associated data.
    """
    _, tag = aead_seal(CipherSuite.AES_GCM_128, key, make_nonce(0), b'',
                       data)
    return tag


def verify_tag(key, data, tag):
    return hmac.compare_digest(mac_tag(key, data), bytes(tag))


def sha256(data):
    return hashlib.sha256(data).digest()


def key_fingerprint(key):
    """Short public label of a key, used for log attribution."""
    return hashlib.sha256(b'authex-fingerprint' + bytes(key)).hexdigest()[:16]


class RandomSource(object):
    """
    Byte generator. Unseeded sources draw from the operating system;
    a seeded source is reproducible and meant for the test harness only.

    **Parameters**

    seed : int or None
    """

    def __init__(self, seed=None):
        self.seed = seed
        if seed is None:
            self._rng = None
        else:
            self._rng = np.random.default_rng(seed)

    @property
    def deterministic(self):
        return self._rng is not None

    def random_bytes(self, n):
        if n < 0:
            raise ValueError('cannot draw %d bytes' % n)
        if n == 0:
            return b''
        if self._rng is None:
            return secrets.token_bytes(n)
        return self._rng.bytes(n)

    def random_key(self):
        while True:
            key = self.random_bytes(KEY_SIZE)
            if key != ZERO_KEY:
                return key

    def randint(self, low, high):
        """Integer in [low, high)."""
        if self._rng is None:
            return low + secrets.randbelow(high - low)
        return int(self._rng.integers(low, high))

    def derive(self, label):
        """Independent child source; unseeded parents give unseeded ones."""
        if self._rng is None:
            return RandomSource()
        digest = hashlib.sha256(('%s/%s' % (self.seed, label)).encode())
        return RandomSource(int.from_bytes(digest.digest()[:8], 'big'))


_default_source = RandomSource()


def random_bytes(n, seed=None):
    """
    n random bytes; a seed selects a reproducible stream.
    """
    if seed is None:
        return _default_source.random_bytes(n)
    return RandomSource(seed).random_bytes(n)
