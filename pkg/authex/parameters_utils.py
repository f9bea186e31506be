# -*- coding: utf-8 -*-
from authex.errors import ConfigError


"""
This module contains routines for managing and validating the `params`
dictionaries taken by configurable authex objects.
"""

U16_MAX = 0xFFFF


def set_parameters(obj, default_params, params):
    """
    Assigns every default parameter to `obj`, overridden by `params`.

    **Parameters**

    obj : object

    default_params : dict
        parameter names and their default values

    params : dict or None
        user overrides; keys unknown to `default_params` are ignored
    """
    params = params or {}
    for (prop, default) in default_params.items():
        setattr(obj, prop, params.get(prop, default))


def check_u16(value, what='value'):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError('%s must be an integer, got %r' % (what, value))
    if not 0 <= value <= U16_MAX:
        raise ConfigError('%s out of 16-bit range: %d' % (what, value))
    return value


def parse_address(address):
    """
    Splits 'host:port' into (host, port).

    **Returns**

    (host, port) : (str, int)
    """
    if not isinstance(address, str) or ':' not in address:
        raise ConfigError('address must look like host:port, got %r'
                          % (address,))
    host, _, port = address.rpartition(':')
    try:
        port = int(port)
    except ValueError:
        raise ConfigError('bad port in address %r' % address)
    if not host or not 0 <= port <= U16_MAX:
        raise ConfigError('bad address %r' % address)
    return host, port


def host_of(address):
    return address.rpartition(':')[0]


def parse_hex_key(text, what='key'):
    try:
        key = bytes.fromhex(text.strip())
    except (AttributeError, ValueError):
        raise ConfigError('%s must be hex encoded' % what)
    if len(key) != 16:
        raise ConfigError('%s must be 16 bytes, got %d' % (what, len(key)))
    return key


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'yes', 'true', 'on'):
        return True
    if text in ('0', 'no', 'false', 'off'):
        return False
    raise ConfigError('not a boolean: %r' % (value,))
