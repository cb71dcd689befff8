"""
Feedforward tanh network approximating the MPC feedback, with a plain-text
weights format.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.constants import WEIGHTS_FORMAT
from ampc.errors import ArtifactFormatError
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_LAYER_DIMS: tuple[int, ...] = (2, 2, 50, 50, 1)


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """
    Layers y = W a + b with tanh on hidden layers and identity on the output.

    in_scale is a (n_in, 2) array of (a_i, b_i) mapping x_i to a_i x_i + b_i,
    out_scale maps the raw output y to u = a y + b.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[NDArray[np.float64], ...]
    biases: tuple[NDArray[np.float64], ...]
    in_scale: NDArray[np.float64]
    out_scale: tuple[float, float]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"Invalid layer dimensions {dims}")
        weights = tuple(np.array(w, dtype=float) for w in self.weights)
        biases = tuple(np.array(b, dtype=float).reshape(-1) for b in self.biases)
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ValueError(f"{len(dims) - 1} layers expected for dims {dims}")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"Layer {i}: W {w.shape} / b {b.shape} do not chain dims {dims}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"Layer {i} has non-finite parameters")
        in_scale = np.array(self.in_scale, dtype=float).reshape(dims[0], 2)
        out_scale = (float(self.out_scale[0]), float(self.out_scale[1]))
        for arr in (*weights, *biases, in_scale):
            arr.setflags(write=False)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "in_scale", in_scale)
        object.__setattr__(self, "out_scale", out_scale)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_vector(self) -> NDArray[np.float64]:
        """All parameters, layer by layer, W row-major followed by b."""
        return np.concatenate(
            [np.append(w.ravel(), b) for w, b in zip(self.weights, self.biases)]
        )

    def with_vector(self, theta: ArrayLike) -> NetworkParams:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.num_parameters:
            raise ValueError(
                f"Expected {self.num_parameters} parameters, got {theta.size}"
            )
        weights, biases = [], []
        pos = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos : pos + b.size])
            pos += b.size
        return replace(self, weights=tuple(weights), biases=tuple(biases))

    def scale_inputs(self, x: ArrayLike) -> NDArray[np.float64]:
        xs = np.asarray(x, dtype=float)
        return xs * self.in_scale[:, 0] + self.in_scale[:, 1]

    def scale_output(self, y: ArrayLike) -> NDArray[np.float64]:
        a, b = self.out_scale
        return a * np.asarray(y, dtype=float) + b

    def unscale_output(self, u: ArrayLike) -> NDArray[np.float64]:
        a, b = self.out_scale
        return (np.asarray(u, dtype=float) - b) / a


def scaling_to_unit_box(lower: ArrayLike, upper: ArrayLike) -> NDArray[np.float64]:
    """(a, b) rows mapping [lower, upper] onto [-1, 1]; zero spans keep unit gain."""
    lo = np.asarray(lower, dtype=float).reshape(-1)
    hi = np.asarray(upper, dtype=float).reshape(-1)
    span = np.where(hi > lo, hi - lo, 2.0)
    a = 2.0 / span
    b = -(hi + lo) / span
    return np.column_stack([a, b])


def scaling_from_unit_box(lower: float, upper: float) -> tuple[float, float]:
    """(a, b) with u = a y + b mapping [-1, 1] onto [lower, upper]."""
    if not upper > lower:
        raise ValueError(f"Output range [{lower}, {upper}] is empty")
    return 0.5 * (upper - lower), 0.5 * (upper + lower)


def init_network(
    seed: int,
    layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS,
    in_scale: ArrayLike | None = None,
    out_scale: tuple[float, float] = (1.0, 0.0),
) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in layer_dims)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    biases = [np.zeros(d) for d in dims[1:]]
    if in_scale is None:
        in_scale = np.column_stack([np.ones(dims[0]), np.zeros(dims[0])])
    return NetworkParams(
        layer_dims=dims,
        weights=tuple(weights),
        biases=tuple(biases),
        in_scale=np.asarray(in_scale),
        out_scale=out_scale,
    )


def forward(
    params: NetworkParams, x: ArrayLike
) -> tuple[NDArray[np.float64], list[NDArray[np.float64]]]:
    """
    Raw (unscaled) output for a batch of states, shape (m,), and the inputs of
    every layer (scaled states first, then each hidden activation).
    """
    a = params.scale_inputs(np.atleast_2d(np.asarray(x, dtype=float)))
    acts = [a]
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if i == last:
            return z[:, 0], acts
        a = np.tanh(z)
        acts.append(a)
    raise AssertionError("unreachable")


def infer(params: NetworkParams, x: ArrayLike) -> NDArray[np.float64] | float:
    """pi_approx(x): scalar for one state, array for a batch of shape (m, 2)."""
    xs = np.asarray(x, dtype=float)
    y, _ = forward(params, xs)
    u = params.scale_output(y)
    if xs.ndim == 1:
        return float(u[0])
    return u


def output_jacobian(
    params: NetworkParams, x: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Raw output y (m,) and its Jacobian with respect to `to_vector()` order, (m, P).
    """
    y, acts = forward(params, x)
    m = y.shape[0]
    blocks: list[NDArray[np.float64]] = [np.empty(0)] * params.num_layers
    delta = np.ones((m, 1))
    for layer in reversed(range(params.num_layers)):
        a_prev = acts[layer]
        dW = delta[:, :, None] * a_prev[:, None, :]
        blocks[layer] = np.concatenate([dW.reshape(m, -1), delta], axis=1)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (1.0 - acts[layer] ** 2)
    return y, np.concatenate(blocks, axis=1)


def lipschitz_bound(params: NetworkParams) -> float:
    """Product of layer spectral norms times the input and output gains."""
    bound = float(np.max(np.abs(params.in_scale[:, 0]))) * abs(params.out_scale[0])
    for w in params.weights:
        bound *= float(np.linalg.norm(w, 2))
    return bound


def _fmt(values: ArrayLike) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).ravel())


def save_weights(params: NetworkParams, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{WEIGHTS_FORMAT} dims={','.join(str(d) for d in params.layer_dims)}"]
    for w, b in zip(params.weights, params.biases):
        lines.append(f"W {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
        lines.append(f"b {b.size}")
        lines.append(_fmt(b))
    lines.append(f"in_scale {_fmt(params.in_scale)}")
    lines.append(f"out_scale {_fmt(params.out_scale)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Saved network weights to {path}")


class _LineReader:
    def __init__(self, path: Path) -> None:
        self.path = path
        self._lines: Iterator[tuple[int, str]] = (
            (i, line.strip())
            for i, line in enumerate(
                path.read_text(encoding="utf-8").splitlines(), start=1
            )
            if line.strip()
        )
        self.lineno = 0

    def next(self, what: str) -> list[str]:
        try:
            self.lineno, line = next(self._lines)
        except StopIteration:
            raise ArtifactFormatError(
                self.path, self.lineno + 1, f"unexpected end of file, missing {what}"
            ) from None
        return line.split()

    def floats(self, tokens: list[str], count: int, what: str) -> NDArray[np.float64]:
        if len(tokens) != count:
            raise ArtifactFormatError(
                self.path,
                self.lineno,
                f"{what}: expected {count} values, got {len(tokens)}",
            )
        try:
            return np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise ArtifactFormatError(self.path, self.lineno, f"{what}: {exc}") from exc


def load_weights(path: Union[str, Path]) -> NetworkParams:
    """
    Raises:
        ArtifactFormatError naming the line and layer on malformed, truncated or
        dimension-mismatched files.
    """
    path = Path(path)
    reader = _LineReader(path)
    header = reader.next("header")
    if (
        len(header) != 2
        or header[0] != WEIGHTS_FORMAT
        or not header[1].startswith("dims=")
    ):
        raise ArtifactFormatError(
            path, reader.lineno, f"expected '{WEIGHTS_FORMAT} dims=...' header"
        )
    try:
        dims = tuple(int(d) for d in header[1][len("dims="):].split(","))
    except ValueError as exc:
        raise ArtifactFormatError(path, reader.lineno, f"bad dims: {exc}") from exc

    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        tag = reader.next(f"layer {layer}")
        if tag != ["W", str(fan_out), str(fan_in)]:
            raise ArtifactFormatError(
                path,
                reader.lineno,
                f"layer {layer}: expected 'W {fan_out} {fan_in}', got '{' '.join(tag)}'",
            )
        rows = [
            reader.floats(
                reader.next(f"layer {layer} weights"), fan_in, f"layer {layer} W"
            )
            for _ in range(fan_out)
        ]
        tag = reader.next(f"layer {layer} bias")
        if tag != ["b", str(fan_out)]:
            raise ArtifactFormatError(
                path, reader.lineno, f"layer {layer}: expected 'b {fan_out}'"
            )
        biases.append(
            reader.floats(
                reader.next(f"layer {layer} bias values"), fan_out, f"layer {layer} b"
            )
        )
        weights.append(np.vstack(rows))

    tokens = reader.next("in_scale")
    if not tokens or tokens[0] != "in_scale":
        raise ArtifactFormatError(path, reader.lineno, "expected 'in_scale'")
    in_scale = reader.floats(tokens[1:], 2 * dims[0], "in_scale")
    tokens = reader.next("out_scale")
    if not tokens or tokens[0] != "out_scale":
        raise ArtifactFormatError(path, reader.lineno, "expected 'out_scale'")
    out_scale = reader.floats(tokens[1:], 2, "out_scale")
    return NetworkParams(
        layer_dims=dims,
        weights=tuple(weights),
        biases=tuple(biases),
        in_scale=in_scale.reshape(dims[0], 2),
        out_scale=(float(out_scale[0]), float(out_scale[1])),
    )
