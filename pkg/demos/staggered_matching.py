"""Matching adopters to not-yet-treated units with the same exposure.

Four units on a small graph adopt at periods 2, 3, 4 and never. At each
adoption date the adopter is compared only with units that are still
untreated and see the same number of treated neighbors.
"""
import numpy as np

from netdid.data import NEVER, StaggeredPanel
from netdid.estimators import staggered_design, staggered_match
from netdid.graph import build_from_edges


def main():
    g = build_from_edges(4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)])
    sp = StaggeredPanel(g, np.zeros((4, 1)), np.array([2, 3, 4, NEVER]),
                        np.arange(16, dtype=float).reshape(4, 4), ("1", "2", "3", "4"))
    for t in (2, 3, 4):
        m = staggered_match(sp, t)
        print(f"t={t}  exposure={[m.exposure[i] for i in range(4)]}  matches={m.to_dict(sp.ids)['matches']}")
    panel, ev, keep = staggered_design(sp, 3)
    print("2x2 around t=3: D =", panel.D.tolist(), " analysis units =", [sp.ids[i] for i in keep])


if __name__ == "__main__":
    main()
