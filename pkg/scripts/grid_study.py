"""Block-order L2 traffic and persistent-grid makespans from shipped scenarios."""

from __future__ import annotations

import argparse

from kittensim.scenarios import load_scenario, run_l2_study, run_persistent_study, run_two_wave


def l2(name: str, infinite: bool) -> None:
    study = run_l2_study(load_scenario(name)["l2"], infinite=infinite)
    print(f"{name} ({'infinite' if infinite else study['capacity_bytes']} byte L2)")
    for r in study["orders"]:
        print(f"  {r['order']:16s} {r['hbm_bytes_fetched']:>12d} B  ratio {r['ratio_to_first']:.3f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--infinite-l2", action="store_true")
    args = ap.parse_args()
    l2("gemm-l2", args.infinite_l2)
    l2("attention-l2", args.infinite_l2)

    sc = load_scenario("persistent-ksweep")
    print("persistent vs relaunch")
    for r in run_persistent_study(sc["persistent"])["rows"]:
        print(f"  K={r['K']:5d} persistent {r['makespan_persistent']:.3e}s "
              f"relaunch {r['makespan_relaunch']:.3e}s advantage {r['advantage']:.2f}")
    tw = run_two_wave(sc["two_wave"])
    print(f"  {tw['num_tasks']} tasks / {tw['num_sms']} SMs: persistent "
          f"{tw['makespan_persistent']} relaunch {tw['makespan_relaunch']}")


if __name__ == "__main__":
    main()
