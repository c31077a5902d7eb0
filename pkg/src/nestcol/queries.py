"""The four benchmark queries and the event dataset schema they run over.

Each query processes one event and emits scalars. "eta of best" tracks the
index of the leading muon instead of a sentinel object, so it needs no
nullable values; it emits nothing for events without muons.
"""

from __future__ import annotations

from .schema import Dtype, List, Primitive, Record

F64 = Primitive(Dtype.FLOAT64)

MUON_SCHEMA = Record({"pt": F64, "eta": F64, "phi": F64})
EVENT_SCHEMA = Record({"muons": List(MUON_SCHEMA)})
DATASET_SCHEMA = List(EVENT_SCHEMA)
DATASET_PREFIX = "event"

MAX_PT = """\
def max_pt(event) {
  maximum = 0.0
  for muon in event.muons {
    if muon.pt > maximum {
      maximum = muon.pt
    }
  }
  emit(maximum)
}
"""

ETA_OF_BEST = """\
def eta_of_best(event) {
  maximum = 0.0
  best = 0
  found = false
  n = len(event.muons)
  for i in range(n) {
    if event.muons[i].pt > maximum {
      maximum = event.muons[i].pt
      best = i
      found = true
    }
  }
  if found {
    emit(event.muons[best].eta)
  }
}
"""

MASS_OF_PAIRS = """\
def mass_of_pairs(event) {
  n = len(event.muons)
  for i in range(n) {
    for j in range(i + 1, n) {
      m1 = event.muons[i]
      m2 = event.muons[j]
      mass = sqrt(2.0 * m1.pt * m2.pt * (cosh(m1.eta - m2.eta) - cos(m1.phi - m2.phi)))
      emit(mass)
    }
  }
}
"""

PT_SUM_OF_PAIRS = """\
def pt_sum_of_pairs(event) {
  n = len(event.muons)
  for i in range(n) {
    for j in range(i + 1, n) {
      m1 = event.muons[i]
      m2 = event.muons[j]
      emit(m1.pt + m2.pt)
    }
  }
}
"""

BUILTIN_QUERIES = {
    "max-pt": MAX_PT,
    "eta-of-best": ETA_OF_BEST,
    "mass-of-pairs": MASS_OF_PAIRS,
    "pt-sum-of-pairs": PT_SUM_OF_PAIRS,
}
