"""Line-oriented text format for spatial networks.

Layout (one token per concept, sections in fixed order):

    netsolve-network 1
    dimension 2
    domain 1.0 1.0
    dirichlet xmin xmax
    nodes 3
    <x> <y>            (one line per node)
    edges 2
    <i> <j>            (one line per edge)
    fibers             (optional; one fiber id per edge line)
    <f>
    weights            (optional; one weight per edge line)
    <w>

Floats are written as float.hex() by default so that a write/read cycle is
bit-identical; plain decimal output is available for human consumption.
The parser accepts either form.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .errors import FileFormatError
from .network import SpatialNetwork, face_token, parse_face_token

MAGIC = "netsolve-network"
VERSION = 1


def _fmt(x: float, decimal: bool) -> str:
    return repr(float(x)) if decimal else float(x).hex()


def _parse_float(tok: str) -> float:
    try:
        return float(tok)
    except ValueError:
        try:
            return float.fromhex(tok)
        except ValueError:
            raise FileFormatError(f"cannot parse float token {tok!r}") from None


def write_network(net: SpatialNetwork, path, decimal: bool = False) -> None:
    """Write a network to a text file. Hex floats (default) round-trip
    bit-identically."""
    buf = io.StringIO()
    w = buf.write
    w(f"{MAGIC} {VERSION}\n")
    w(f"dimension {net.dimension}\n")
    w("domain " + " ".join(_fmt(l, decimal) for l in net.domain) + "\n")
    w("dirichlet" + "".join(
        " " + face_token(a, s) for a, s in net.dirichlet_faces) + "\n")
    w(f"nodes {net.nnodes}\n")
    for row in net.coords:
        w(" ".join(_fmt(x, decimal) for x in row) + "\n")
    w(f"edges {net.nedges}\n")
    for i, j in net.edges:
        w(f"{i} {j}\n")
    if net.edge_fiber is not None:
        w("fibers\n")
        for f in net.edge_fiber:
            w(f"{f}\n")
    if net.edge_weight is not None:
        w("weights\n")
        for x in net.edge_weight:
            w(_fmt(x, decimal) + "\n")
    data = buf.getvalue()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(data)


class _Lines:
    def __init__(self, path):
        with open(path, "r", encoding="ascii") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0
        self.path = os.fspath(path)

    def next(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise FileFormatError(f"{self.path}: unexpected end of file")

    def peek(self) -> str | None:
        p = self.pos
        while p < len(self.lines):
            line = self.lines[p].strip()
            if line:
                return line
            p += 1
        return None


def read_network(path, require_connected: bool = True) -> SpatialNetwork:
    """Read a network file written by write_network."""
    src = _Lines(path)

    tok = src.next().split()
    if len(tok) != 2 or tok[0] != MAGIC:
        raise FileFormatError(f"{src.path}: not a {MAGIC} file")
    if int(tok[1]) != VERSION:
        raise FileFormatError(f"{src.path}: unsupported version {tok[1]}")

    def expect(keyword: str) -> list[str]:
        parts = src.next().split()
        if parts[0] != keyword:
            raise FileFormatError(
                f"{src.path}: expected '{keyword}', found '{parts[0]}'")
        return parts[1:]

    dim = int(expect("dimension")[0])
    if dim not in (2, 3):
        raise FileFormatError(f"{src.path}: dimension must be 2 or 3")
    domain = [_parse_float(t) for t in expect("domain")]
    if len(domain) != dim:
        raise FileFormatError(f"{src.path}: domain needs {dim} side lengths")
    try:
        faces = [parse_face_token(t) for t in expect("dirichlet")]
    except ValueError as exc:
        raise FileFormatError(f"{src.path}: {exc}") from None

    nnodes = int(expect("nodes")[0])
    coords = np.empty((nnodes, dim))
    for k in range(nnodes):
        parts = src.next().split()
        if len(parts) != dim:
            raise FileFormatError(f"{src.path}: node line {k} needs {dim} coords")
        coords[k] = [_parse_float(t) for t in parts]

    nedges = int(expect("edges")[0])
    edges = np.empty((nedges, 2), dtype=np.int64)
    for k in range(nedges):
        parts = src.next().split()
        if len(parts) != 2:
            raise FileFormatError(f"{src.path}: edge line {k} needs 2 indices")
        edges[k] = [int(parts[0]), int(parts[1])]

    edge_fiber = None
    edge_weight = None
    while src.peek() is not None:
        section = src.next().split()[0]
        if section == "fibers":
            edge_fiber = np.array([int(src.next()) for _ in range(nedges)],
                                  dtype=np.int64)
        elif section == "weights":
            edge_weight = np.array([_parse_float(src.next())
                                    for _ in range(nedges)])
        else:
            raise FileFormatError(f"{src.path}: unknown section '{section}'")

    return SpatialNetwork(coords, edges, domain, dirichlet_faces=faces,
                          edge_fiber=edge_fiber, edge_weight=edge_weight,
                          require_connected=require_connected)
