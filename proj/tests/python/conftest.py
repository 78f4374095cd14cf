import os
import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(ROOT / "python"))


def _binary() -> Path:
    env = os.environ.get("ECHOSET_BIN")
    if env:
        return Path(env)
    for cand in (ROOT / "build" / "tools" / "echoset",):
        if cand.exists():
            return cand
    pytest.skip("echoset binary not found; set ECHOSET_BIN")


@pytest.fixture(scope="session")
def echoset_bin() -> Path:
    return _binary()


@pytest.fixture(scope="session")
def run(echoset_bin):
    def _run(*args, env=None, cwd=None, check=True):
        full_env = dict(os.environ)
        full_env.pop("ECHOSET_OUT_ROOT", None)
        if env:
            full_env.update(env)
        proc = subprocess.run([str(echoset_bin), *map(str, args)], capture_output=True, text=True,
                              env=full_env, cwd=cwd)
        if check and proc.returncode != 0:
            raise AssertionError(f"exit {proc.returncode}\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
        return proc

    return _run


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, run):
    out = tmp_path_factory.mktemp("corpus") / "c"
    run("build-dataset", "--n", 6, "--seed", 3, "--grid", "96x128", "--jobs", 2, "--out", out)
    return out


def tree_bytes(root: Path, exclude=("run_config.json",)) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in exclude}
