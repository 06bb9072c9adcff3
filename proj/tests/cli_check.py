"""End-to-end checks of the invlab binary: generic CSV re-parse and exit codes."""
import csv
import json
import subprocess
import sys
import tempfile
from pathlib import Path

exe = str(Path(sys.argv[1]).resolve())
failures = []


def run(*args, cwd):
    return subprocess.run([exe, *args], cwd=cwd, capture_output=True, text=True)


def check(ok, what):
    print(("ok   " if ok else "FAIL ") + what)
    if not ok:
        failures.append(what)


with tempfile.TemporaryDirectory() as tmp:
    methods = ["ife", "fp:k=1,tol=0", "ddim"]
    trials = 5
    cfg = {"seed": 9, "trials": trials, "dim": 4, "methods": methods, "grid": {"steps": 12},
           "output": {"csv": "m.csv", "bench_csv": "b.csv"}}
    Path(tmp, "cfg.json").write_text(json.dumps(cfg))

    p = run("roundtrip", "--config", "cfg.json", cwd=tmp)
    check(p.returncode == 0, "roundtrip exits 0")
    with open(Path(tmp, "m.csv"), newline="") as f:
        rows = list(csv.DictReader(f))
    check(len(rows) == len(methods) * trials, f"csv rows {len(rows)} == methods x trials")
    check(list(rows[0].keys()) == ["method", "seed", "dim", "steps", "nfe", "mse", "psnr", "wall_ms"], "csv header")
    check({r["method"] for r in rows} == set(methods), "method labels survive quoting")
    check(all(int(r["nfe"]) == 12 * (2 if r["method"].startswith("fp") else 1) for r in rows), "nfe column")

    first = Path(tmp, "m.csv").read_text()
    run("roundtrip", "--config", "cfg.json", "--threads", "3", cwd=tmp)
    second = Path(tmp, "m.csv").read_text()
    strip = lambda t: [line.rsplit(",", 1)[0] for line in t.splitlines()]
    check(strip(first) == strip(second), "csv reproducible apart from wall_ms")

    p = run("bench", "--config", "cfg.json", "--max-extra", "2", cwd=tmp)
    check(p.returncode == 0, "bench exits 0 with a consistent ledger")
    with open(Path(tmp, "b.csv"), newline="") as f:
        bench = list(csv.DictReader(f))
    check(all(r["ledger_ok"] == "1" for r in bench), "bench ledger column")

    check(run("roundtrip", "--trials", "0", cwd=tmp).returncode == 2, "trials=0 exits 2")
    check(run("roundtrip", "--method", "newton", cwd=tmp).returncode == 2, "unknown method exits 2")
    Path(tmp, "bad.json").write_text('{"seed": 1, "dim": 2, "methods": ["ife"]}')
    p = run("roundtrip", "--config", "bad.json", cwd=tmp)
    check(p.returncode == 2 and "trials" in p.stderr, "missing trials exits 2 naming the field")
    p = run("roundtrip", "--method", "oracle:tol=1e-300,max=1", "--steps", "10", cwd=tmp)
    check(p.returncode == 3, "non-converging solver exits 3")

    p = run("stats", "--trials", "200", "--steps", "10", "--json", "s.json", "--hist-prefix", "h", cwd=tmp)
    check(p.returncode == 0, "stats exits 0")
    stats = json.loads(Path(tmp, "s.json").read_text())
    check(len(stats["estimators"]) == 3, "stats json has three estimators")
    with open(Path(tmp, "h_ife_variance.csv"), newline="") as f:
        hist = list(csv.DictReader(f))
    check(sum(int(r["count"]) for r in hist) == 200 * 10, "variance histogram counts")

    p = run("dump-schedule", "--T", "10", cwd=tmp)
    check(p.returncode == 0 and len(json.loads(p.stdout)["alpha_bar"]) == 10, "dump-schedule emits T values")

sys.exit(1 if failures else 0)
