from setuptools import find_packages, setup

__version__ = "0.1.0"

setup(name='bnspde',
      version=__version__,
      description='Parabolic equations with interior and boundary noise',
      long_description='Drift-implicit simulation of non-autonomous parabolic equations driven by interior and '
                       'boundary Wiener noise, with Hölder, convergence and variational diagnostics',
      packages=find_packages(exclude=["tests"]),
      python_requires=">=3.8",
      install_requires=[
          "click",
          "munch",
          "numpy",
          "pandas",
          "scipy",
          "sty",
          "tqdm",
      ],
      extras_require={"test": ["pytest", "hypothesis"]},
      entry_points={"console_scripts": ["bnspde=bnspde.cli:main"]},
      )
