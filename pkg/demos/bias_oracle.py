"""How big is the bias from ignoring exposure?

Builds random discrete designs and compares three numbers: the bias of the
exposure-blind DID computed by brute force, the closed form that conditions on
exposure only, and the closed form that also conditions on a latent U.
"""
import numpy as np

from netdid.oracle import direct_bias, prop1_bias, prop2_bias, random_spec, tau_datt, tau_obs


def main():
    rng = np.random.default_rng(0)
    print("# exposure only")
    for _ in range(5):
        spec = random_spec(rng, ng=3, nx=3)
        print(f"tau_obs={tau_obs(spec):+.4f}  tau={tau_datt(spec):+.4f}  "
              f"direct={direct_bias(spec):+.6f}  closed form={prop1_bias(spec):+.6f}")

    print("# exposure and latent U")
    for independent in (True, False):
        spec = random_spec(rng, ng=3, nx=3, nu=3, independent=independent)
        print(f"independent={independent!s:5}  direct={direct_bias(spec):+.6f}  "
              f"general={prop2_bias(spec):+.6f}  simplified={prop2_bias(spec, True):+.6f}")
    # the simplified form drops a cross term and is exact only when exposure is
    # independent of (D, U) given x


if __name__ == "__main__":
    main()
