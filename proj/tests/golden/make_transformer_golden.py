#!/usr/bin/env python3
"""Writes a small transformer weight container and its reference outputs.

The forward pass here is a plain numpy evaluation written independently of
the C++ code; the container is packed by hand with struct and zlib.crc32.

    python3 make_transformer_golden.py [output_dir]
"""

import json
import struct
import sys
import zlib
from pathlib import Path

import numpy as np

D, H, HEADS, BLOCKS, C = 8, 16, 4, 2, 5
WIDTH, HEIGHT = 640.0, 480.0
POS_DIMS = [2, 32, 64, 128, H]
EPS = 1e-5


def make_weights(rng):
    w = {}

    def linear(name, out_dim, in_dim):
        w[name + ".weight"] = (0.3 * rng.standard_normal((out_dim, in_dim))).astype(np.float32)
        w[name + ".bias"] = (0.3 * rng.standard_normal(out_dim)).astype(np.float32)

    def norm(name):
        w[name + ".weight"] = (1.0 + 0.2 * rng.standard_normal(H)).astype(np.float32)
        w[name + ".bias"] = (0.2 * rng.standard_normal(H)).astype(np.float32)

    linear("in_proj", H, D)
    for k in range(4):
        linear(f"pos.{k}", POS_DIMS[k + 1], POS_DIMS[k])
    for i in range(BLOCKS):
        p = f"blocks.{i}."
        norm(p + "norm1")
        linear(p + "attn.qkv", 3 * H, H)
        linear(p + "attn.out", H, H)
        norm(p + "norm2")
        linear(p + "mlp.fc1", 2 * H, H)
        linear(p + "mlp.fc2", H, 2 * H)
    norm("norm")
    linear("head", C, H)
    return w


def pack(weights):
    body = struct.pack("<QQQQ", 1, 1, HEADS, len(weights))
    for name, t in weights.items():
        raw = name.encode()
        body += struct.pack("<Q", len(raw)) + raw
        body += struct.pack("<QQ", 0, t.ndim)
        body += b"".join(struct.pack("<Q", d) for d in t.shape)
        body += t.astype("<f4").tobytes()
    return b"PRAMWTS1" + body + struct.pack("<Q", zlib.crc32(body))


def f64(w, name):
    return w[name].astype(np.float64)


def lin(w, name, x):
    return x @ f64(w, name + ".weight").T + f64(w, name + ".bias")


def layer_norm(w, name, x):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + EPS) * f64(w, name + ".weight") + f64(w, name + ".bias")


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def positional(w, u, v):
    x = np.array([[(2 * u - WIDTH) / WIDTH, (2 * v - HEIGHT) / HEIGHT]])
    for k in range(4):
        x = lin(w, f"pos.{k}", x)
        if k < 3:
            x = np.maximum(x, 0.0)
    return x[0]


def forward(w, tokens):
    x = tokens.copy()
    dh = H // HEADS
    for i in range(BLOCKS):
        p = f"blocks.{i}."
        h = layer_norm(w, p + "norm1", x)
        qkv = lin(w, p + "attn.qkv", h)
        q, k, v = qkv[:, :H], qkv[:, H:2 * H], qkv[:, 2 * H:]
        heads = []
        for j in range(HEADS):
            s = slice(j * dh, (j + 1) * dh)
            a = softmax(q[:, s] @ k[:, s].T / np.sqrt(dh))
            heads.append(a @ v[:, s])
        x = x + lin(w, p + "attn.out", np.concatenate(heads, axis=1))
        h = layer_norm(w, p + "norm2", x)
        x = x + lin(w, p + "mlp.fc2", np.maximum(lin(w, p + "mlp.fc1", h), 0.0))
    return softmax(lin(w, "head", layer_norm(w, "norm", x)))


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    rng = np.random.default_rng(8)
    w = make_weights(rng)

    keypoints = []
    for _ in range(5):
        d = rng.standard_normal(D).astype(np.float32)
        d = (d / np.linalg.norm(d)).astype(np.float32)
        keypoints.append({"u": float(rng.uniform(0, WIDTH)), "v": float(rng.uniform(0, HEIGHT)),
                          "desc": [float(x) for x in d]})

    desc = np.array([k["desc"] for k in keypoints], dtype=np.float64)
    pos = np.array([positional(w, k["u"], k["v"]) for k in keypoints])
    tokens = lin(w, "in_proj", desc) + pos
    s = forward(w, tokens)

    (out / "transformer_small.wts").write_bytes(pack(w))
    doc = {
        "image_size": [WIDTH, HEIGHT],
        "keypoints": keypoints,
        "positional_center": positional(w, WIDTH / 2, HEIGHT / 2).tolist(),
        "positional_kp0": pos[0].tolist(),
        "tokens": tokens.tolist(),
        "confidences": s.tolist(),
        "labels": [int(np.argmax(r)) for r in s],
    }
    (out / "transformer_small.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
