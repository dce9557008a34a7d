"""Every descriptor family computed by hand-checkable steps on one diary day.

The day: drive to work with a household member, walk to lunch and back with a
colleague, take transit to the shops after work, walk home, then a walk/bike
school run with two household members.
"""

import datetime as dt

from mobinfer.features import person_descriptors
from mobinfer.graph import (
    build_graph, global_clustering, mean_local_clustering, project, trip_entropy, trip_gini,
)
from mobinfer.ingest import Labels, PersonRecord, Trip
from mobinfer.trip_features import (
    collapse_day, cotravel_fractions, extract_tours, motif_tally, multimodal_fraction, n_closed,
    split_segments,
)

DAY = dt.date(2019, 4, 8)
LEGS = [
    # origin, destination, mode, depart (min after midnight), hh, non-hh companions
    ("home", "work", "drive", 470, 1, 0),
    ("work", "leisure", "walk", 720, 0, 0),
    ("leisure", "work", "walk", 780, 0, 1),
    ("work", "shopping", "transit", 1020, 0, 0),
    ("shopping", "home", "walk", 1090, 0, 0),
    ("home", "school", "walk", 1140, 2, 0),
    ("school", "home", "bike", 1200, 0, 0),
]
trips = [Trip("p1", "h1", "2019", DAY, o, d, (m,), t, t + 20, 20.0, 3.0, hh, non)
         for o, d, m, t, hh, non in LEGS]

g = build_graph(trips)
print("purpose graph:", g.N, "OD pairs,", g.T, "trips")
print("  entropy %.3f bits, gini %.3f" % (trip_entropy(g), trip_gini(g)))
p = project(g)
print("  clustering global %.3f, mean local %.3f" % (global_clustering(p), mean_local_clustering(p)))

walk = collapse_day(trips).walk
print("collapsed walk:", " > ".join(walk))
for seg in split_segments(walk):
    print("  segment", seg)
print("motif counts:", {k: v for k, v in motif_tally(trips).counts.items() if v})

tours = extract_tours(trips)
for t in tours:
    print("tour from %-5s closed=%s modes=%s" % (t.anchor, t.closed, sorted(t.modes)))
print("closed tours %d, multimodal fraction %.2f" % (n_closed(tours), multimodal_fraction(tours)))
print("co-travel:", {k: round(v, 3) for k, v in cotravel_fractions(trips).items()})

d = person_descriptors(PersonRecord("p1", "h1", "2019", trips, Labels()))
print("%d descriptors, e.g. f_rush=%.2f speed_mean=%.1f km/h" % (len(d), d["f_rush"], d["speed_mean"]))
