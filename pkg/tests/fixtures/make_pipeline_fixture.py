"""Regenerate pipeline_200.jsonl: 200 tweets, two planted discursive communities.

Community A: verified va0..va3 and non-verified na0..na19; B likewise with
vb*/nb*. Every non-verified user retweets each verified user of its own
community once; five users per community also retweet one verified user of
the other side. Hashtags come from the community's pool plus a shared pool.
Run from this directory: ``python make_pipeline_fixture.py``.
"""

import datetime as dt
import json
import random

POOLS = {
    "a": ["flattax", "salvini", "lega", "immigrazione", "centrodestra", "prima_gli_italiani"],
    "b": ["m5s", "dimaio", "redditodicittadinanza", "onesta", "movimento5stelle", "partecipa"],
}
SHARED = ["elezioni2018", "4marzo", "votiamo"]


def main(path="pipeline_200.jsonl", seed=7):
    rng = random.Random(seed)
    start = dt.datetime(2018, 3, 1, 8, tzinfo=dt.timezone.utc)
    rows = []

    def tags(c):
        k = rng.randint(1, 3)
        out = rng.sample(POOLS[c], k)
        if rng.random() < 0.4:
            out.append(rng.choice(SHARED))
        return out

    def stamp():
        return (start + dt.timedelta(minutes=rng.randrange(3 * 24 * 60 - 600))).strftime("%Y-%m-%dT%H:%M:%SZ")

    for c in "ab":
        other = "b" if c == "a" else "a"
        verified = [f"v{c}{i}" for i in range(4)]
        for i in range(20):
            user = f"n{c}{i}"
            for v in verified:
                rows.append({"user_id": user, "verified": False, "created_at": stamp(),
                             "hashtags": tags(c), "rt_user_id": v, "rt_verified": True})
            if i < 5:
                rows.append({"user_id": user, "verified": False, "created_at": stamp(),
                             "hashtags": tags(c), "rt_user_id": f"v{other}{rng.randrange(4)}",
                             "rt_verified": True})
        for _ in range(15):
            user = rng.choice(verified)
            rows.append({"user_id": user, "verified": True, "created_at": stamp(), "hashtags": tags(c)})
    assert len(rows) == 200
    rows.sort(key=lambda r: (r["created_at"], r["user_id"]))
    with open(path, "w", encoding="utf-8") as fh:
        for i, r in enumerate(rows):
            fh.write(json.dumps({"id": f"t{i:03d}", **r}) + "\n")


if __name__ == "__main__":
    main()
