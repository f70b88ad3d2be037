#!/usr/bin/env python

from setuptools import setup, find_packages


setup(
    name='mflab',
    version='0.1.0',
    description='Numerical lab for maximally mixed 2D Euler flows',
    install_requires=[
        'numpy',
        'scipy>=1.12',
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points={
        'console_scripts': ['mflab=mflab.cli:main'],
    },
    packages=find_packages(exclude=['tests']),
)
