"""Deformable registration of a truncated sphere onto the complete one.

The source keeps only the polar caps of a radius-10 sphere (centroids
within 6 mm of the z axis); the target is the full sphere.  A
translation stage seeds a multiscale LDDMM run.  Because the data term
charges only uncovered source mass, the free boundary at the cap edge
is happy to shrink inward where coverage is cheap.  The local mass
regularizer pins each face to its reference area and suppresses that
collapse; running with regularizer="none" shows the shrinkage it
prevents.

With --full the run uses the frozen benchmark budget (max_iters=150,
about two minutes per variant); the default budget of 60 iterations per
scale shows the same contrast in about half the time.  Deformed meshes
and a JSON report land in demos/out/truncated_sphere/.
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

import varimatch as vm

OUT = Path(__file__).resolve().parent / "out" / "truncated_sphere"


def area_change(source_mesh, deformed_mesh):
    a0 = vm.face_elements(source_mesh).weights
    a1 = vm.face_elements(deformed_mesh).weights
    return (a1 - a0) / a0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full", action="store_true",
                    help="use the frozen benchmark budget (max_iters=150)")
    args = ap.parse_args(argv)

    radius = 10.0
    target_mesh = vm.synth_sphere(radius, 3)
    source_mesh = vm.truncate_by_cylinder(target_mesh, (0, 0, 0), (0, 0, 1), 6.0)
    target = vm.face_elements(target_mesh)
    cfg = vm.RegistrationConfig(
        sigma_w_schedule=(4.0, 2.0),
        lambda1=1000.0,
        lambda2=1.0,
        regularizer="local",
        lbfgs=vm.LbfgsOptions(max_iters=150 if args.full else 60),
    )
    print(f"source {source_mesh.faces.shape[0]} faces (polar caps), "
          f"target {target_mesh.faces.shape[0]} faces, "
          f"budget {cfg.lbfgs.max_iters} iters/scale\n")

    OUT.mkdir(parents=True, exist_ok=True)
    rows = []
    results = {}
    for name, run_cfg in (("local", cfg), ("none", replace(cfg, regularizer="none"))):
        start = time.perf_counter()
        res = vm.pipeline("translation+lddmm", source_mesh, target_mesh, run_cfg)
        seconds = time.perf_counter() - start
        rel = area_change(source_mesh, res.deformed_source)
        mean_mm = vm.surface_metric(vm.face_elements(res.deformed_source), target)
        rows.append((name, mean_mm, np.abs(rel).max(), np.maximum(-rel, 0).max(),
                     seconds))
        results[name] = res
        vm.save_mesh(res.deformed_source, OUT / f"deformed_{name}.off")

    print(f"{'regularizer':>12} {'mean NN dist':>13} {'max |dA|':>9} "
          f"{'max shrink':>11} {'wall':>7}")
    for name, mean_mm, max_da, shrink, seconds in rows:
        print(f"{name:>12} {mean_mm:10.4f} mm {max_da:8.2%} {shrink:10.2%} "
              f"{seconds:6.1f}s")
    print()
    print(f"mean distance target: within 2% of radius = {0.02 * radius:.1f} mm")
    print("the regularized run keeps every face near its reference area;")
    print("without it the cap edge collapses inward, hence the larger shrink")

    vm.emit_report(
        results["local"],
        {"surface_mean_mm": rows[0][1], "max_abs_area_change": float(rows[0][2])},
        OUT / "report.json",
        config=cfg,
    )
    print(f"\nwrote deformed meshes and report under {OUT}")


if __name__ == "__main__":
    main()
