"""Print stabilizer and uncertainty-set dimensions for Brunovsky plants.

Usage: python3 scripts/dimension_table.py [max_n]
"""
import sys

from cloak.group import stabilizer_subspace
from cloak.privacy import dim_group, dim_pair_formula, dim_prime_formula, scenario1_lower_bound
from cloak.sysmodel import lift_system, make_prime


def partitions(n, largest=None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in partitions(n - k, k):
            yield (k,) + rest


def main(max_n=5):
    head = f"{'kappa':<14}{'pair':>6}{'system':>8}{'numeric':>9}{'bound':>7}{'group':>7}"
    print(head)
    print("-" * len(head))
    for n in range(1, max_n + 1):
        for kappa in partitions(n):
            plant = make_prime(kappa)
            numeric = stabilizer_subspace(lift_system(plant), True).dim
            print(f"{str(kappa):<14}{dim_pair_formula(plant):>6}{dim_prime_formula(plant):>8}"
                  f"{numeric:>9}{scenario1_lower_bound(plant):>7}"
                  f"{dim_group(plant.n, plant.m, plant.m):>7}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
