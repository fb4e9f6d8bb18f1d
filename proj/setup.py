"""Builds the ifol package: the _core extension is produced by CMake."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).parent.resolve()
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)
        out_dir = Path(self.get_ext_fullpath(ext.name)).parent.resolve()

        cmake_args = [
            f"-DCMAKE_BUILD_TYPE={os.environ.get('IFOL_BUILD_TYPE', 'Release')}",
            f"-DPython3_EXECUTABLE={sys.executable}",
            "-DIFOL_BUILD_TESTS=OFF",
        ]
        subprocess.run(["cmake", str(source_dir), *cmake_args], cwd=build_dir, check=True)
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_core", "-j"],
            check=True,
        )
        built = list((build_dir / "python" / "ifol").glob("_core*"))
        if not built:
            raise RuntimeError("CMake did not produce the _core extension")
        out_dir.mkdir(parents=True, exist_ok=True)
        self.copy_file(built[0], out_dir / built[0].name)


setup(
    ext_modules=[CMakeExtension("ifol._core")],
    cmdclass={"build_ext": CMakeBuild},
)
