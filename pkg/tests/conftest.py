import pytest

from rerankeval.candgen import Slate
from rerankeval.ingest import Catalog, History, Interaction, ItemCard


def make_catalog(n, title_prefix="Movie"):
    items = {}
    for i in range(1, n + 1):
        iid = str(i)
        items[iid] = ItemCard(id=iid, title=f"{title_prefix} {i}",
                              genres=["Drama"] if i % 2 else ["Comedy", "Action"],
                              language="en",
                              overview_short=f"Short overview number {i}.")
    return Catalog(items=items)


def make_slate(user, item_ids, source="random"):
    return Slate(user=user, items=[str(i) for i in item_ids], source=source)


def make_history(user, item_ids, rating=4.0, t0=1000):
    entries = [(str(i), rating, t0 - k) for k, i in enumerate(item_ids)]
    return History(user=user, entries=entries)


@pytest.fixture
def catalog():
    return make_catalog(30)


def write_corpus(dir_path, n_users=30, n_items=60, n_high=20, n_low=5):
    """Synthetic MovieLens-style ratings.csv + items.csv.

    Every user rates n_high items at >= 4.0 (so they qualify for eval with
    n_test=10) plus n_low sub-threshold items.
    """
    import random as _random
    rng = _random.Random(1234)
    ratings_lines = ["userId,itemId,rating,timestamp"]
    ts = 1000
    for u in range(1, n_users + 1):
        items = rng.sample(range(1, n_items + 1), n_high + n_low)
        for k, item in enumerate(items):
            rating = rng.choice([4.0, 4.5, 5.0]) if k < n_high else \
                rng.choice([1.0, 2.0, 3.0])
            ts += 1
            ratings_lines.append(f"u{u},{item},{rating},{ts}")
    (dir_path / "ratings.csv").write_text("\n".join(ratings_lines) + "\n")

    items_lines = ["id,title,genres,language,overview"]
    for i in range(1, n_items + 1):
        items_lines.append(f"{i},Movie {i},Drama|Comedy,en,Overview of movie {i}.")
    (dir_path / "items.csv").write_text("\n".join(items_lines) + "\n")
    return dir_path / "ratings.csv", dir_path / "items.csv"


def interactions(rows):
    return [Interaction(user=str(u), item=str(i), rating=float(r), timestamp=int(t))
            for u, i, r, t in rows]
