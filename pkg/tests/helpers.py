import numpy as np

from wola.model import ModelSpec, init_params, predict, weighted_batch_gradient


def fit_gd(ds, steps=300, lr=0.5, seed=0, spec=None):
    """Full-batch gradient descent; returns (spec, theta, train accuracy)."""
    spec = spec or ModelSpec("softmax_regression", ds.feature_dim, max(ds.num_classes, 2))
    theta = init_params(spec, seed)
    for _ in range(steps):
        theta = theta - lr * weighted_batch_gradient(spec, theta, ds.features, ds.labels)
    acc = float(np.mean(predict(spec, theta, ds.features) == ds.labels))
    return spec, theta, acc
