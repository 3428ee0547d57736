"""Adam optimizer and parameter checkpoint IO.

Each loss term in a training loop owns its own ``Adam`` instance, so the
first/second moments of one loss never mix with another's.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .autodiff import Parameter


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        # bias-corrected step size; moments stay uncorrected in place
        alpha = self.lr / (1.0 - b1 ** self.t)
        corr2 = np.sqrt(1.0 - b2 ** self.t)
        for i, p in enumerate(self.params):
            g = p.grad
            m, v = self.m[i], self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            denom = np.sqrt(v)
            denom /= corr2
            denom += self.eps
            p.data -= alpha * m / denom

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0


def save_params(params, path_prefix):
    """Write a JSON manifest (``.json``) plus one flat float64 blob
    (``.bin``). Round-trips bit exactly."""
    manifest = []
    offset = 0
    chunks = []
    for p in params:
        if p.name is None:
            raise ValueError("checkpointed parameters must be named")
        flat = np.ascontiguousarray(p.data, dtype="<f8").reshape(-1)
        manifest.append({"name": p.name, "shape": list(p.data.shape),
                         "offset": offset, "size": int(flat.size)})
        chunks.append(flat)
        offset += flat.size
    with open(path_prefix + ".bin", "wb") as f:
        f.write(np.concatenate(chunks).tobytes() if chunks else b"")
    with open(path_prefix + ".json", "w") as f:
        json.dump({"dtype": "<f8", "params": manifest}, f, indent=1, sort_keys=True)


def load_params(path_prefix):
    """Read a checkpoint written by ``save_params``. Returns an ordered
    dict name -> Parameter."""
    with open(path_prefix + ".json") as f:
        manifest = json.load(f)
    blob = np.fromfile(path_prefix + ".bin", dtype="<f8")
    out = {}
    for entry in manifest["params"]:
        lo = entry["offset"]
        data = blob[lo:lo + entry["size"]].reshape(entry["shape"]).copy()
        out[entry["name"]] = Parameter(data, name=entry["name"])
    return out


def checkpoint_exists(path_prefix):
    return os.path.exists(path_prefix + ".json") and os.path.exists(path_prefix + ".bin")
