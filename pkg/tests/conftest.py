import hypothesis.strategies as st
from hypothesis import settings

from essf.dislocation import ZElement
from essf.marked_partition import MarkedPartition

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

mark_values = st.one_of(st.just(0.0), st.floats(0.01, 10.0, allow_nan=False))


@st.composite
def marked_partitions(draw, min_level=1, max_level=7):
    n = draw(st.integers(min_level, max_level))
    raw = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    marks = {lab: draw(mark_values) for lab in sorted(set(raw))}
    return MarkedPartition.from_labels(raw, marks)


@st.composite
def permutations(draw, n):
    return tuple(draw(st.permutations(list(range(1, n + 1)))))


@st.composite
def z_elements(draw, max_pairs=3):
    k = draw(st.integers(0, max_pairs))
    cuts = sorted(draw(st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k)))
    sizes = [b - a for a, b in zip([0.0] + cuts, cuts)]
    pairs = [(s, draw(st.floats(0.05, 3.0)) if s > 0 else 0.0) for s in sizes]
    pairs = sorted(pairs, reverse=True)
    return ZElement(pairs)
