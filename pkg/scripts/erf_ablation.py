"""Effective-receptive-field ablation sweep on the stage-1 probe model.

Prints the support size of every single-mechanism ablation and checks that
each one lies inside the full model's support."""
import argparse

from msaconv import erf


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--inputs", type=int, default=erf.PROBE_INPUTS)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    full = None
    for without in erf.ablation_grid(grid=True):
        m = erf.config_erf(erf.PROBE_CONFIG, without, seed=args.seed, n_inputs=args.inputs)
        sup = m.support()
        if full is None:
            full = sup
        inside = not (sup & ~full).any()
        print(f"{erf.variant_name(without):40s} support {int(sup.sum()):6d} px  inside full: {inside}")


if __name__ == "__main__":
    main()
