"""Binary checkpoint files for named parameter collections.

Layout (all integers u32 little-endian, all floats 64-bit little-endian):

    magic "SSARCKPT" | version | network count
    per network: name length | name utf-8 | layer count
                 per layer: out | in | weights row-major (out*in) | bias (out)

Every stored tensor pair is a "layer": linear layers store (W, b); a
layernorm layer contributes one extra entry with the scale as an (out, 1)
weight and the shift as the bias.  Optimizer moments are appended as extra
networks ("<name>.adam.m", "<name>.adam.v") in the same layout, and scalar
state rides along as (1, 1) layers.  Loading validates shapes against the
architecture being restored into.
"""

import struct

import numpy as np

from ..exceptions import DataFormatError
from .mlp import MlpParams

MAGIC = b"SSARCKPT"
VERSION = 1


def params_to_layers(p: MlpParams):
    layers = []
    for k in range(len(p.weights)):
        layers.append((p.weights[k], p.biases[k]))
        if p.norms[k] == "layernorm":
            layers.append((p.ln_scales[k][:, None], p.ln_shifts[k]))
    return layers


def layers_into_params(p: MlpParams, layers):
    """Copy loaded layers back into an architecture-matched MlpParams."""
    idx = 0
    for k in range(len(p.weights)):
        W, b = layers[idx]
        idx += 1
        if W.shape != p.weights[k].shape or b.shape != p.biases[k].shape:
            raise DataFormatError(
                f"layer {k}: stored {W.shape}/{b.shape}, expected "
                f"{p.weights[k].shape}/{p.biases[k].shape}")
        p.weights[k][:] = W
        p.biases[k][:] = b
        if p.norms[k] == "layernorm":
            s, t = layers[idx]
            idx += 1
            p.ln_scales[k][:] = s[:, 0]
            p.ln_shifts[k][:] = t
    if idx != len(layers):
        raise DataFormatError(f"expected {idx} stored layers, file has {len(layers)}")
    return p


def arrays_to_layers(arrays):
    """Pack a flat array list (2-D/1-D alternating, or arbitrary) as layers."""
    layers = []
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 1:
            layers.append((a[:, None], np.zeros(a.shape[0])))
        else:
            layers.append((a, np.zeros(a.shape[0])))
    return layers


def save_checkpoint(path, networks):
    """``networks`` is an ordered mapping name -> list of (W, b) layers."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(networks))]
    for name, layers in networks.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", len(layers)))
        for W, b in layers:
            W = np.ascontiguousarray(W, dtype=np.float64)
            b = np.ascontiguousarray(b, dtype=np.float64)
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise DataFormatError(f"network {name}: bad layer shapes {W.shape}/{b.shape}")
            chunks.append(struct.pack("<II", W.shape[0], W.shape[1]))
            chunks.append(W.tobytes())
            chunks.append(b.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path):
    """Returns an ordered dict name -> list of (W, b) layers."""
    with open(path, "rb") as f:
        buf = f.read()
    off = 0

    def need(n, what):
        nonlocal off
        if off + n > len(buf):
            raise DataFormatError(
                f"truncated checkpoint reading {what}: expected {off + n} bytes, "
                f"file has {len(buf)}", offset=off)
        out = buf[off:off + n]
        off += n
        return out

    if need(8, "magic") != MAGIC:
        raise DataFormatError("bad magic, not a checkpoint file", offset=0)
    version, count = struct.unpack("<II", need(8, "header"))
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", offset=8)
    networks = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", need(4, "name length"))
        name = need(nlen, "name").decode("utf-8")
        (nlayers,) = struct.unpack("<I", need(4, "layer count"))
        layers = []
        for _ in range(nlayers):
            out_d, in_d = struct.unpack("<II", need(8, f"{name} layer dims"))
            W = np.frombuffer(need(out_d * in_d * 8, f"{name} weights"),
                              dtype="<f8").reshape(out_d, in_d).copy()
            b = np.frombuffer(need(out_d * 8, f"{name} bias"), dtype="<f8").copy()
            layers.append((W, b))
        networks[name] = layers
    if off != len(buf):
        raise DataFormatError(f"trailing bytes after checkpoint body", offset=off)
    return networks
