"""Linear-probe ceiling for the toy shapes dataset.

Fits multinomial logistic regression on raw, standardised pixels with every
training label available, by full-batch gradient descent, and reports train and
held-out accuracy. Used for the numbers in docs/toy_shapes.md.

Usage: python3 benchmarks/linear_probe.py [--classes 4] [--seeds 0,1,2]
"""

import argparse

import numpy as np

from pairssl.data import generate_toy_shapes

TEST_SEED_OFFSET = 1_000_003  # same offset the trainer uses for the toy test set


def fit_softmax(x, y, k, l2=1e-3, iters=1500, lr=0.5):
    w = np.zeros((x.shape[1], k))
    b = np.zeros(k)
    onehot = np.eye(k)[y]
    for _ in range(iters):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(x)
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def accuracy(x, y, w, b):
    return float(np.mean(np.argmax(x @ w + b, axis=1) == y))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--n-per-class", type=int, default=600)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    for seed in (int(s) for s in args.seeds.split(",")):
        train = generate_toy_shapes(args.classes, args.n_per_class, 32, seed)
        test = generate_toy_shapes(args.classes, 200, 32, seed + TEST_SEED_OFFSET)
        xtr = train.images().reshape(len(train), -1)
        xte = test.images().reshape(len(test), -1)
        mu, sd = xtr.mean(axis=0), xtr.std(axis=0) + 1e-8
        xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
        w, b = fit_softmax(xtr, train.labels, args.classes)
        print(
            f"seed {seed}: train acc {accuracy(xtr, train.labels, w, b):.3f}  "
            f"test acc {accuracy(xte, test.labels, w, b):.3f}"
        )


if __name__ == "__main__":
    main()
