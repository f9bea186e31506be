# -*- coding: utf-8 -*-

__author__ = 'authex developers'
__email__ = 'authex-dev@lists.example.org'
__version__ = '0.1.0'
