"""Smoke test for the pyfedtensor extension.

Build and install first, e.g.

    pip install --no-build-isolation ./crates/python

then run ``python python/smoke_test.py``.
"""

import pyfedtensor as ft


def main():
    tensor, truth = ft.synthesize(seed=0)
    print(tensor, truth)

    cfg = ft.Config(rank=5, omega=250.0)
    shards = ft.partition(tensor, 3, seed=0)
    fed = ft.run_federated(shards, cfg)
    central = ft.run_central(tensor, cfg)
    local = ft.run_local(shards, cfg)
    for name, r in [("federated", fed), ("central", central), ("local", local)]:
        print(f"{name:<10} rmse {r.rmse:.6f}  iterations {r.iterations:3d}  total {r.total_s:.4f}s")

    gap = abs(fed.rmse - central.rmse) / central.rmse
    assert gap <= 0.005, gap
    assert local.rmse > fed.rmse
    assert fed.converged

    sizes, index = ft.align([[["aspirin", "insulin"]], [["insulin", "heparin"]]])
    print("aligned sizes", sizes, index)
    assert sizes == [3]
    assert index[0][0]["insulin"] == index[1][0]["insulin"]

    perm, cost = ft.hungarian([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert cost == 5.0, (perm, cost)
    print("smoke test passed")


if __name__ == "__main__":
    main()
