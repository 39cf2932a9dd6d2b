"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd


# --- preprocessing, written against pandas ---------------------------------------

def pandas_pipeline(path: str, holdout_days: float = 1.0, fraction: float = 1.0,
                    min_item_count: int = 5) -> dict:
    df = pd.read_csv(path, header=None, usecols=[0, 1, 2], names=["sid", "time", "item"],
                     dtype=str)
    df["ts"] = pd.to_datetime(df["time"], format="%Y-%m-%dT%H:%M:%S.%fZ", errors="coerce", utc=True)
    df = df.dropna(subset=["ts"]).reset_index(drop=True)
    df["ts"] = df["ts"].astype("int64") // 1_000_000
    df["order"] = np.arange(len(df))

    counts = df["item"].value_counts()
    df = df[df["item"].map(counts) >= min_item_count]
    lengths = df.groupby("sid").size()
    df = df[df["sid"].map(lengths) >= 2]

    end = df.groupby("sid")["ts"].max()
    cutoff = end.max() - holdout_days * 86_400_000
    train_ids = end[end <= cutoff].index
    test_ids = end[end > cutoff].index
    train = df[df["sid"].isin(train_ids)]
    test = df[df["sid"].isin(test_ids)]

    test = test[test["item"].isin(set(train["item"]))]
    test = test[test["sid"].map(test.groupby("sid").size()) >= 2]

    if fraction < 1:
        keep = math.ceil(fraction * train["sid"].nunique())
        first_pos = train.groupby("sid")["order"].min()
        ends = pd.DataFrame({"end": end[train["sid"].unique()]})
        ends["first"] = first_pos[ends.index]
        ends = ends.sort_values(["end", "first"])
        train = train[train["sid"].isin(ends.index[-keep:])]
        test = test[test["item"].isin(set(train["item"]))]
        test = test[test["sid"].map(test.groupby("sid").size()) >= 2]

    n_train = train["sid"].nunique()
    n_test = test["sid"].nunique()
    clicks = len(train) + len(test)
    return {
        "clicks": int(clicks),
        "train_sessions": int(len(train) - n_train),
        "test_sessions": int(len(test) - n_test),
        "items": int(train["item"].nunique()),
        "avg_length": round(clicks / (n_train + n_test), 4),
        "raw_train_sessions": int(n_train),
        "raw_test_sessions": int(n_test),
    }


# --- straight-line model evaluation ----------------------------------------------

def _softmax(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    s = sum(e)
    return [x / s for x in e]


def oracle_scores(params: dict, config, items: list[int]) -> np.ndarray:
    """Scores for one unpadded session, evaluated head by head with explicit loops."""
    d, h = config.d, config.heads
    dk = d // h
    scale = math.sqrt(dk if config.scale_per_head else d)
    E = np.array([params["embed"][i] for i in items], dtype=np.float64)
    n = len(items)
    for layer in range(config.layers):
        p = {k.split(".")[1]: np.asarray(v, dtype=np.float64)
             for k, v in params.items() if k.startswith(f"layer{layer}.")}
        heads = []
        for i in range(h):
            cols = slice(i * dk, (i + 1) * dk)
            Wq, Wk, Wv = p["Wq"][:, cols], p["Wk"][:, cols], p["Wv"][:, cols]
            Q = [E[a] @ Wq for a in range(n)]
            K = [E[a] @ Wk for a in range(n)]
            Vv = [E[a] @ Wv for a in range(n)]
            out = np.zeros((n, dk))
            for a in range(n):
                weights = _softmax([float(Q[a] @ K[b]) / scale for b in range(n)])
                for b in range(n):
                    out[a] += weights[b] * Vv[b]
            heads.append(out)
        F = np.concatenate(heads, axis=1) @ p["Wo"] + E
        hidden = np.maximum(0.0, F @ p["W1"] + p["b1"])
        E = hidden @ p["W2"] + p["b2"] + F
    h_last = E[-1]
    if config.prediction_mode == "se":
        se = {k.split(".")[1]: np.asarray(v, dtype=np.float64) for k, v in params.items()
              if k.startswith("se.")}
        s_global = np.zeros(d)
        for j in range(n):
            gate = 1.0 / (1.0 + np.exp(-(E[j] @ se["Wg1"] + h_last @ se["Wg2"] + se["c"])))
            s_global += float(gate @ se["q"]) * E[j]
        h_last = np.concatenate([s_global, h_last]) @ se["W3"]
    items_table = np.asarray(params["embed"], dtype=np.float64)[1:]
    return np.array([float(h_last @ e) for e in items_table])


# --- ranking ----------------------------------------------------------------------

def sort_rank(scores, label: int) -> int:
    """Rank via a full sort on (-score, index)."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return order.index(label - 1) + 1


def hr_oracle(ranks, k):
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr_oracle(ranks, k):
    return math.fsum(1 / r for r in ranks if r <= k) / len(ranks)
