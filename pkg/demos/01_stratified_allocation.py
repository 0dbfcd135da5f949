"""How the diversity-stratified initializer splits a labeling budget.

A long-tailed pool (most clips are day-sunny, straight driving) gets its
initial budget split over weather-lighting buckets with shares proportional
to count**gamma. gamma = 1 follows the pool proportions; smaller gamma pushes
budget toward the rare buckets.
"""

from driveselect.diversity import first_level_shares, integerize

# Bucket counts with a heavy day-sunny head and a tiny night-rainy tail.
counts = {"DS": 491, "DR": 125, "NS": 71, "NR": 13}
budget = 70

print(f"pool buckets: {counts}   (total {sum(counts.values())})")
print(f"initial budget: {budget} clips\n")

print(f"{'gamma':>6} | {'DS':>4} {'DR':>4} {'NS':>4} {'NR':>4}")
print("-" * 30)
for gamma in (1.0, 0.8, 0.5, 0.3):
    shares = first_level_shares(counts, gamma)
    alloc = integerize(shares, budget, counts)
    print(f"{gamma:>6} | {alloc['DS']:>4} {alloc['DR']:>4} {alloc['NS']:>4} {alloc['NR']:>4}")

print("""
At gamma=1 the night-rainy bucket gets 1 clip of 70; at gamma=0.5 it gets 6.
The same count**gamma split is applied again inside each bucket over the four
command classes (left / right / overtake / straight), and the per-stratum
picks are then spread over the speed range at regular intervals.
""")

# Capacity-capped apportionment: a stratum never receives more than it has.
shares = {"a": 0.9, "b": 0.1}
print("capacity demo: shares {a: 0.9, b: 0.1}, budget 10, capacities {a: 5, b: 100}")
print("  ->", integerize(shares, 10, {"a": 5, "b": 100}), "(overflow moved to b)")
