from glob import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

# The extension compiles the whole core directly so that `pip install` needs
# no CMake run; the CMake build produces the same module for in-tree use.
ext = Pybind11Extension(
    "q2p._q2p",
    sources=["python/bindings.cpp"] + sorted(glob("src/*.cpp")),
    include_dirs=["include", "vendor"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
