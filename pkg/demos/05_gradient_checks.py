"""Finite-difference verification of all four gradient families.

Equivalent to ``hashfield gradcheck --module all`` but callable in-process.
"""

from hashfield.gradcheck import run_gradcheck

ok, results = run_gradcheck("all", seeds=range(2))
for r in results:
    print(f"{r['family']:10s} seed {r['seed']}  "
          f"max rel err {r['max_rel_err']:.3e}  "
          f"(tolerance {r['tolerance']:.0e})  "
          f"{'pass' if r['passed'] else 'FAIL'}")
print("all passed" if ok else "FAILURES above")
