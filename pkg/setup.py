from os import path

from setuptools import find_packages, setup

here = path.abspath(path.dirname(__file__))

with open(path.join(here, "README.md")) as f:
    long_description = f.read()

setup(
    name="bevkit",
    use_scm_version={"version_scheme": "post-release"},
    setup_requires=["setuptools_scm"],
    description=(
        "Bird's-eye-view perception, instance tracking and probabilistic world "
        "models on synthetic driving scenes."
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[  # Optional
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    python_requires=">=3.8",
    install_requires=["click", "numpy", "pandas", "scipy"],
    entry_points={"console_scripts": ["bevkit=bevkit.cli:main"]},
    zip_safe=False,
)
