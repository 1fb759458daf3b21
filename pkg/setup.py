"""Setup of AGCD context debiasing."""
import re

from setuptools import find_namespace_packages, setup  # type: ignore

METADATA = {}
with open("agcd/debias/__init__.py", "r", encoding="utf-8") as info:
    METADATA = dict(re.findall(r'__([a-z_]+)__ = "([^"]+)"', info.read()))

REQUIRES = []
with open("requirements.txt", "r", encoding="utf-8") as requires:
    for line in requires:
        REQUIRES.append(line.strip())


def doc():
    """Return README.rst content."""
    with open('README.rst', 'r', encoding="utf-8") as readme:
        return readme.read().strip()


setup(name="agcd.debias",
      version=METADATA["version"],
      description=METADATA["description"],
      author=METADATA["author_name"],
      author_email=METADATA["author_email"],
      maintainer=METADATA["author_name"],
      maintainer_email=METADATA["author_email"],
      license="MIT",
      url=METADATA["url"],
      project_urls={
          "Bug Tracker": "https://github.com/agcd-debias/agcd-debias/issues",
          "Source Code": "https://github.com/agcd-debias/agcd-debias",
      },
      packages=find_namespace_packages(include=["agcd.debias"]),
      package_data={'': ['py.typed']},
      data_files=[("share/doc/agcd-debias", ["README.rst", "ChangeLog"])],
      entry_points={
          "console_scripts": ["agcd-debias = agcd.debias.cli:main"],
      },
      long_description=doc(),
      long_description_content_type="text/x-rst",
      classifiers=[
          "Development Status :: 3 - Alpha",
          "Intended Audience :: Developers",
          "Natural Language :: English",
          "License :: OSI Approved :: MIT License",
          "Operating System :: POSIX",
          "Programming Language :: Python :: 3 :: Only",
          "Topic :: Scientific/Engineering :: Artificial Intelligence",
      ],
      python_requires=">=3.9",
      install_requires=REQUIRES,
      tests_require=[
          'pytest',
          'func-timeout',
      ])
