from setuptools import setup, find_packages

setup(
    name="mfmfe-darcy",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    py_modules=["main"],
    install_requires=[
        'numpy>=1.24.3',
        'scipy>=1.12',
        'meshio>=5.3',
        'colorama>=0.4.6',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'mfmfe=main:main',
        ],
    },
)
