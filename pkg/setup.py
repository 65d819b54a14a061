from sys import version_info
from setuptools import setup

if version_info.major == 3 and version_info.minor < 7 or \
        version_info.major < 3:
    print('Your Python interpreter must be 3.7 or greater!')
    exit(1)

from gexse import __version__


setup(name='gexse',
      version=__version__,
      description='Spectral sensor encoder for human activity recognition with symbolic explanations',
      license='GPLv3',
      packages=['gexse', 'gexse.data', 'gexse.tensor'],
      package_data={'gexse.data': ['opportunity_channels.json']},
      scripts=['bin/gexse'],
      setup_requires=['pytest-runner'],
      tests_require=['pytest', 'pytest-mock', 'pytest-cov'],
      install_requires=[
          'numpy>=1.20',
          'scipy',
          'pandas',
          'scikit-learn',
          'jsonschema',
          'tabulate',
          'cachetools',
          'wrapt',
          'arrow',
          'Pillow>=8.0',
      ],
      extras_require={
          'plot': ['matplotlib'],
      },
      include_package_data=True,
      zip_safe=False,
      classifiers=[
          'Programming Language :: Python :: 3.7',
          'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
          'Topic :: Scientific/Engineering :: Artificial Intelligence',
          'Intended Audience :: Science/Research',
      ])
