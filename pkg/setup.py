from setuptools import setup, find_packages
import os

def read(file_name):
    return open(os.path.join(os.path.dirname(__file__), file_name)).read()

setup(
    name='SigProp',
    description='Signal propagation in post-norm transformers at initialisation: closed-form theory, trainability diagrams and Monte Carlo checks',
    long_description=read('README.md'),
    license='MIT',
    packages=find_packages(exclude=['tests']),
    package_data={'SigProp': ['examples/*.json']},
    install_requires=['torch', 'pytorch-lightning', 'numpy', 'tqdm'],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['sigprop = SigProp.cli:main']},
    version='0.0.1',
)
