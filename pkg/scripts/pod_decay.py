"""Print the POD singular value decay of the moving-front snapshots.

    python scripts/pod_decay.py 400 800 1500
"""
import sys

from l1rom import pod


def main(argv):
    sizes = [int(a) for a in argv] or [400, 800, 1500]
    for res in pod.pod_decay_study(sizes, method="lapack"):
        s1 = res.singular_values[0]
        print(f"N={res.N:5d}  sigma1/N={s1 / res.N:.4f}  slope(2..40)={res.slope((2, 40)):+.4f}")
        print("  ell:  " + "  ".join(f"{k:6d}" for k in (1, 2, 3, 5, 10, 20, 40)))
        print("  ratio:" + "  ".join(f"{res.ratios[k - 1]:6.4f}" for k in (1, 2, 3, 5, 10, 20, 40)))


if __name__ == "__main__":
    main(sys.argv[1:])
