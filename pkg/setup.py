#!/usr/bin/env python
# -*- coding: utf-8 -*-

try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup


readme = open('README.rst').read()
history = open('HISTORY.rst').read().replace('.. :changelog:', '')

requirements = [
    'numpy',
    'scipy',
    'cryptography',
    'PyYAML',
]

test_requirements = [
    'pycryptodomex',
]

setup(
    name='authex',
    version='0.1.0',
    description='Authentic execution of distributed event-driven '
                'applications on simulated trusted execution environments',
    long_description=readme + '\n\n' + history,
    author='authex developers',
    author_email='authex-dev@lists.example.org',
    packages=[
        'authex',
    ],
    package_dir={'authex':
                 'authex'},
    include_package_data=True,
    install_requires=requirements,
    license="BSD",
    zip_safe=False,
    keywords=[
        'authex',
        'authentic execution',
        'trusted execution environment',
        'secure I/O',
    ],
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'Topic :: Security :: Cryptography',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
    ],
    entry_points={
        'console_scripts': ['authex = authex.cli:main'],
    },
    test_suite='tests',
    tests_require=test_requirements
)
