import importlib.util
import sys
from pathlib import Path

import numpy as np
import pytest

from uch.dataio import LabeledSplit, center_train_query

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def _load_generator():
    spec = importlib.util.spec_from_file_location(
        "make_demo_digits", SCRIPTS / "make_demo_digits.py"
    )
    mod = importlib.util.module_from_spec(spec)
    sys.modules.setdefault("make_demo_digits", mod)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="session")
def demo_corpus(tmp_path_factory):
    """The deterministic two-view digits corpus, generated once per session."""
    out = tmp_path_factory.mktemp("digits2k")
    return _load_generator().build(out, seed=7)


def build_split(train_views, train_labels, query_views=None, query_labels=None):
    """LabeledSplit straight from in-memory arrays, centered the usual way."""
    train_fms, query_fms = [], []
    for v, tr in enumerate(train_views, start=1):
        qu = None if query_views is None else query_views[v - 1]
        tr_fm, qu_fm, _ = center_train_query(tr, qu, modality_id=v)
        train_fms.append(tr_fm)
        query_fms.append(qu_fm)
    has_query = query_views is not None
    n_train = train_views[0].shape[0]
    n_query = query_views[0].shape[0] if has_query else 0
    return LabeledSplit(
        train_features=tuple(train_fms),
        train_labels=np.asarray(train_labels),
        query_features=tuple(query_fms) if has_query else None,
        query_labels=np.asarray(query_labels) if has_query else None,
        train_indices=np.arange(n_train),
        query_indices=np.arange(n_train, n_train + n_query),
    )


def two_view_blobs(n_per_class=40, n_query_per_class=12, classes=3,
                   dims=(12, 9), sep=6.0, seed=11):
    """Two linearly related views of gaussian class blobs, plus labels."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=sep, size=(classes, dims[0]))
    mix = rng.normal(size=(dims[0], dims[1]))
    def draw(count):
        xs, ys = [], []
        for c in range(classes):
            pts = centers[c] + rng.normal(size=(count, dims[0]))
            xs.append(pts)
            ys.append(np.full(count, c))
        view1 = np.concatenate(xs)
        labels = np.concatenate(ys)
        view2 = view1 @ mix + 0.1 * rng.normal(size=(view1.shape[0], dims[1]))
        return [view1, view2], labels
    train_views, train_labels = draw(n_per_class)
    query_views, query_labels = draw(n_query_per_class)
    return train_views, train_labels, query_views, query_labels


@pytest.fixture(scope="session")
def blobs_split():
    tr, trl, qu, qul = two_view_blobs()
    return build_split(tr, trl, qu, qul)
