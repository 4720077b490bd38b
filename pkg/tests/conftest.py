import threading

import numpy as np
import pytest

from cplkit.mesh import Mesh


def unit_square(n, name="square"):
    """Structured triangulation of [0,1]^2 with n cells per side."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    tris = np.vstack([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return Mesh(name, verts, triangles=tris)


def grid_points(n, name="grid"):
    """Vertex-only (n+1)^2 grid on the unit square."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return Mesh(name, np.column_stack([X.ravel(), Y.ravel()]))


def run_threads(*targets, timeout=60):
    """Run callables in parallel threads; returns results, re-raises the first failure."""
    results = [None] * len(targets)
    errors = [None] * len(targets)

    def wrap(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors[i] = exc

    threads = [threading.Thread(target=wrap, args=(i, fn), daemon=True) for i, fn in enumerate(targets)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    for e in errors:
        if e is not None:
            raise e
    return results, errors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tcp_pair():
    """Two connected localhost TCP sockets."""
    import socket

    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    a = socket.create_connection(srv.getsockname())
    b, _ = srv.accept()
    srv.close()
    return a, b


class DictStore:
    """In-memory data buffers with identity mappings, as used by CouplingScheme."""

    def __init__(self, fields):
        self.data = {k: np.array(v, dtype=float) for k, v in fields.items()}
        self.mapped = []

    def values(self, data, mesh):
        return self.data[(data, mesh)]

    def set_values(self, data, mesh, values):
        self.data[(data, mesh)] = np.array(values, dtype=float)

    def map_write(self):
        self.mapped.append("write")

    def map_read(self):
        self.mapped.append("read")


def cli(*args, cwd=None):
    """Start ``python3 -m cplkit`` with the given arguments; returns the Popen handle."""
    import subprocess
    import sys

    return subprocess.Popen([sys.executable, "-m", "cplkit", *map(str, args)], cwd=cwd,
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)


def cli_pair(args_a, args_b, cwd=None, timeout=60):
    """Run two coupled CLI processes; returns [(returncode, stdout, stderr), ...] in argument order."""
    procs = [cli(*args_a, cwd=cwd), cli(*args_b, cwd=cwd)]
    out = []
    try:
        for p in procs:
            so, se = p.communicate(timeout=timeout)
            out.append((p.returncode, so, se))
    finally:
        for p in procs:
            if p.poll() is None:
                p.kill()
    return out


# one line per acceptance criterion, filled by test_acceptance and printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])
