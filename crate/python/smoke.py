"""End-to-end smoke run of the Python bindings on the bundled cases.

Uses an installed `pqvflex` module if there is one, otherwise the library
built by `cargo build -p pqvflex-py` (debug or release).
"""

import importlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("pqvflex")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpqvflex_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "pqvflex.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("pqvflex")
    sys.exit("pqvflex module not found; run `cargo build -p pqvflex-py` first")


def main():
    pq = load_module()
    ts = pq.Case.load("ts9")
    ds = pq.Case.load("ds33")
    print(ts, ds)
    assert len(ts.pcc_links) == 3 and ds.n_buses == 33

    res = pq.opf(pq.Case.from_json(ts.to_json()))
    assert res["status"] == "optimal", res
    print("ts9 opf objective", round(res["objective"], 4))

    box = pq.bounding_box(ds)
    center = [(box["x_min"][k] + box["x_max"][k]) / 2 for k in "pqv"]
    v = pq.verdict(ds, *center)
    assert v["conclusive"], v
    outside = pq.verdict(ds, center[0], center[1], 1.2)
    assert outside["conclusive"] and not outside["feasible"]

    data = pq.sample(ds, n_bbps=10, n_fds=40, n_cost=20, seed=5)
    print("sampled", len(data["boundary"]), "boundary and", len(data["cost_targets"]), "cost points")
    assert 40 <= len(data["boundary"]) <= 50 and len(data["cost_targets"]) == 20
    again = pq.sample(ds, n_bbps=10, n_fds=40, n_cost=20, seed=5)
    assert json.dumps(data) == json.dumps(again), "sampling is not deterministic"

    cfg = {"degree": 4, "gamma_in": 0.999, "gamma_out": [1.005, 1.07], "c_in": -0.15, "c_bnd": 0.0, "c_out": [0.1, 0.2]}
    bundle = pq.Bundle.fit(ds, data["boundary"], data["cost_features"], data["cost_targets"], data["box"], config=cfg)
    bundle = pq.Bundle.from_json(bundle.to_json())
    value, grad, _ = bundle.region(*data["boundary"][0])
    cost, _ = bundle.cost(*data["cost_features"][0])
    print(f"region at a boundary point {value:.4f}, cost model {cost:.3f} vs sampled {data['cost_targets'][0]:.3f}")
    assert len(grad) == 3

    metrics = pq.validate(bundle, ds, n=40, n_cost=10, seed=2)
    print("validation", metrics["region"]["tp"], metrics["region"]["tn"], metrics["region"]["fp"], metrics["region"]["fn"])

    out = pq.coordinate(ts, [bundle], [ds])
    print("coordination total cost", out["summary"]["total_cost"])
    bench = pq.benchmark(ts, [bundle], [ds], trials=2, seed=3)
    assert len(bench["trials"]) == 2
    print("benchmark feasibility", bench["summary"]["feasibility_ratio"])
    print("smoke ok")


if __name__ == "__main__":
    main()
