# -*- coding: utf-8 -*-

from setuptools import setup, find_packages

with open('README.rst', 'r') as fp:
    readme = fp.read()


setup_args = {
    'name': 'hjbnode',
    'version': '0.1.0',
    'description': 'Learning value and Lyapunov functions of control-affine systems from HJB residuals',
    'long_description': readme,
    'long_description_content_type': 'text/x-rst; charset=UTF-8',
    'author': 'hjbnode developers',
    'license': "BSD",
    'install_requires': [
        'numpy',
        'scipy',
        'torch',
        'matplotlib',
        'contourpy',
        'pyyaml',
        'hdmf'
    ],
    'setup_requires': 'pytest-runner',
    'packages': find_packages(exclude=['tests']),
    'entry_points': {
        'console_scripts': [
            'hjbnode=hjbnode.cli:main',
        ]
    },
    'classifiers': [
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "License :: OSI Approved :: BSD License",
        "Development Status :: 2 - Pre-Alpha",
        "Intended Audience :: Science/Research",
        "Operating System :: Microsoft :: Windows",
        "Operating System :: MacOS",
        "Operating System :: Unix",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    'keywords': 'optimal-control '
                'hamilton-jacobi-bellman '
                'lyapunov '
                'neural-ode '
                'adjoint '
                'mppi '
                'model-predictive-control '
                'reproducible-research',
    'zip_safe': False
}

if __name__ == '__main__':
    setup(**setup_args)
