"""Validate a configuration, draw it, and couple two solverdummies.

Writes a small serial-implicit configuration, prints its diagnostics and
graphviz digraph, then runs both participants of the solverdummy pair.

    python3 demos/config_and_dummies.py | dot -Tpng > config.png   # optional
"""

import sys
import tempfile
import threading

from cplkit.config import parse, to_dot, validate
from cplkit.harness import dummy_config, run_dummy


def main():
    with tempfile.TemporaryDirectory() as tmp:
        text = dummy_config("serial-implicit", windows=4, exchange_directory=tmp, acceleration="aitken")
        cfg = parse(text)
        diags = validate(cfg)
        print(f"{len(diags)} diagnostic(s)", file=sys.stderr)
        sys.stdout.write(to_dot(cfg))

        stats = {}

        def run(name):
            stats[name] = run_dummy(text, name, vertices=4, timeout=10)

        threads = [threading.Thread(target=run, args=(n,)) for n in ("SolverOne", "SolverTwo")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    for name, s in sorted(stats.items()):
        print(f"{name}: {s['windows']} windows, {s['advances']} advances, {s['iterations']} iterations",
              file=sys.stderr)


if __name__ == "__main__":
    main()
