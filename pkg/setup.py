from setuptools import find_packages, setup

from oarseg import __description__, __version__

setup(
    name="oarseg",
    version=__version__,
    description=__description__,
    packages=find_packages(exclude=["oarseg.tests"]),
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "pandas>=2.0.0",
        "Pillow>=9.5.0",
        "tqdm>=4.65.0",
        "python-dotenv>=1.0.0",
        "rich>=13.0.0",
    ],
    extras_require={"torch": ["torch>=2.0.0"]},
    entry_points={"console_scripts": ["oarseg=oarseg.cli:main"]},
)
