"""From-scratch differentiable kernel for the CNN decoder.

Implements 1-D "same" convolution, batch normalization, ReLU, a dense
sigmoid head, MSE loss, and Adam, with exact hand-written backward passes.
Convolutions run as im2col + BLAS matmul so float32 training stays fast on a
CPU.  A float64 mode exists for finite-difference gradient checking.

Shapes follow the (batch, length, channels) convention throughout; the
decoder chains (B, n, 1) -> (B, n, c1) -> ... -> flatten -> (B, ell).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Conv1d",
    "BatchNorm",
    "ReLU",
    "DenseSigmoid",
    "CnnDecoder",
    "Adam",
    "mse_loss",
    "sigmoid",
    "cnn_decode",
    "DEFAULT_KERNEL_SIZE",
    "DEFAULT_CHANNELS",
]

#: Kernel size 24 with 10-50-50 kernels per layer: the configuration the
#: hyperparameter sweep selects (larger kernels stopped helping beyond 24).
DEFAULT_KERNEL_SIZE = 24
DEFAULT_CHANNELS = (10, 50, 50)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mse_loss(targets, p_hat) -> tuple[float, np.ndarray]:
    """Mean squared error over a (B, ell) batch and its gradient wrt p_hat."""
    t = np.asarray(targets, dtype=p_hat.dtype)
    if t.shape != p_hat.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {p_hat.shape}")
    diff = p_hat - t
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


class Conv1d:
    """Same-length 1-D convolution with zero padding at the signal edges.

    Even kernels split the padding with the extra zero on the right.
    Weights are (k, in_channels, out_channels).
    """

    def __init__(self, kernel_size: int, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.k = kernel_size
        self.cin = in_channels
        self.cout = out_channels
        self.pad_left = (kernel_size - 1) // 2
        self.pad_right = kernel_size - 1 - self.pad_left
        std = np.sqrt(2.0 / (kernel_size * in_channels))
        self.W = (std * rng.standard_normal((kernel_size, in_channels, out_channels))
                  ).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)

    def _im2col(self, x: np.ndarray, left: int) -> np.ndarray:
        B, n, c = x.shape
        xp = np.zeros((B, n + self.k - 1, c), dtype=x.dtype)
        xp[:, left:left + n] = x
        win = np.lib.stride_tricks.sliding_window_view(xp, self.k, axis=1)
        # (B, n, c, k) -> (B*n, k*c), matching the (k, channels) weight layout
        return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * n, self.k * c)

    def forward(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[2] != self.cin:
            raise ValueError(f"expected (B, n, {self.cin}) input, got {x.shape}")
        B, n, _ = x.shape
        cols = self._im2col(x, self.pad_left)
        y = cols @ self.W.reshape(self.k * self.cin, self.cout) + self.b
        return y.reshape(B, n, self.cout), (cols, B, n)

    def infer_forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without the im2col cache, as one matmul per tap.

        Avoids materializing the (B*n, k*cin) patch matrix, whose repack cost
        dominates at long blocklengths; only valid when no backward follows.
        """
        if x.ndim != 3 or x.shape[2] != self.cin:
            raise ValueError(f"expected (B, n, {self.cin}) input, got {x.shape}")
        B, n, _ = x.shape
        xp = np.zeros((B, n + self.k - 1, self.cin), dtype=x.dtype)
        xp[:, self.pad_left:self.pad_left + n] = x
        y = np.broadcast_to(self.b, (B, n, self.cout)).copy()
        for j in range(self.k):
            y += xp[:, j:j + n] @ self.W[j]
        return y

    def backward(self, dy: np.ndarray, cache):
        cols, B, n = cache
        d2 = dy.reshape(B * n, self.cout)
        dW = (cols.T @ d2).reshape(self.k, self.cin, self.cout)
        db = d2.sum(axis=0)
        # dx is dy correlated with the time-reversed transposed kernel; the
        # swapped padding makes the output line up with the forward input.
        w_flip = np.ascontiguousarray(self.W[::-1].transpose(0, 2, 1))
        dy_cols = self._im2col(dy, self.pad_right)
        dx = (dy_cols @ w_flip.reshape(self.k * self.cout, self.cin)).reshape(B, n, self.cin)
        return dx, {"W": dW, "b": db}

    def param_arrays(self):
        return {"W": self.W, "b": self.b}


class BatchNorm:
    """Per-channel batch normalization over the (batch, length) axes.

    Train mode standardizes with batch statistics (biased variance) and
    updates the running statistics by exponential moving average; infer mode
    uses the running statistics only and mutates nothing.
    """

    def __init__(self, channels: int, eps: float = 1e-3, momentum: float = 0.99,
                 dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: np.ndarray, train: bool):
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in train mode")
            mu = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mu).astype(x.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(x.dtype)
            return self.gamma * xhat + self.beta, (xhat, inv_std)
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        return self.gamma * (x - self.running_mean) * inv_std + self.beta, None

    def backward(self, dy: np.ndarray, cache):
        if cache is None:
            raise RuntimeError("batch-norm backward requires a train-mode forward")
        xhat, inv_std = cache
        dgamma = np.sum(dy * xhat, axis=(0, 1))
        dbeta = np.sum(dy, axis=(0, 1))
        dxhat = dy * self.gamma
        dx = inv_std * (dxhat - dxhat.mean(axis=(0, 1))
                        - xhat * (dxhat * xhat).mean(axis=(0, 1)))
        return dx.astype(dy.dtype), {"gamma": dgamma, "beta": dbeta}

    def param_arrays(self):
        return {"gamma": self.gamma, "beta": self.beta}


class ReLU:
    def forward(self, x: np.ndarray):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask):
        return dy * mask


class DenseSigmoid:
    """Fully connected layer with sigmoid activation; outputs land in (0, 1)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float32):
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.W = rng.uniform(-limit, limit, (in_features, out_features)).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ValueError(f"expected (B, {self.W.shape[0]}) input, got {x.shape}")
        p = sigmoid(x @ self.W + self.b)
        return p, (x, p)

    def backward(self, dp: np.ndarray, cache):
        x, p = cache
        dz = dp * p * (1.0 - p)
        dW = x.T @ dz
        db = dz.sum(axis=0)
        dx = dz @ self.W.T
        return dx, {"W": dW, "b": db}

    def param_arrays(self):
        return {"W": self.W, "b": self.b}


class CnnDecoder:
    """Stacked conv/batch-norm/ReLU blocks with a dense sigmoid head.

    The default three blocks chain (B, n, 1) -> (B, n, 10) -> (B, n, 50)
    -> (B, n, 50) -> flatten -> (B, ell).  Training mutates the model
    (single writer); an infer-mode model is immutable and its forward pass
    is a pure function.
    """

    def __init__(self, n: int, ell: int, kernel_size: int = DEFAULT_KERNEL_SIZE,
                 channels: tuple[int, ...] = DEFAULT_CHANNELS, seed: int = 0,
                 dtype=np.float32):
        if not channels:
            raise ValueError("need at least one conv block")
        self.n = n
        self.ell = ell
        self.kernel_size = kernel_size
        self.channels = tuple(int(c) for c in channels)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=self.seed)))
        self.convs: list[Conv1d] = []
        self.norms: list[BatchNorm] = []
        self.relus: list[ReLU] = []
        cin = 1
        for c in self.channels:
            self.convs.append(Conv1d(kernel_size, cin, c, rng, dtype))
            self.norms.append(BatchNorm(c, dtype=dtype))
            self.relus.append(ReLU())
            cin = c
        self.head = DenseSigmoid(n * cin, ell, rng, dtype)
        self.train_mode = False
        self._caches = None

    # -- mode handling -----------------------------------------------------
    def set_train(self):
        self.train_mode = True
        return self

    def set_infer(self):
        self.train_mode = False
        self._caches = None
        return self

    # -- forward / backward ------------------------------------------------
    def _coerce(self, y) -> np.ndarray:
        x = np.asarray(y, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1] != self.n or x.shape[2] != 1:
            raise ValueError(f"expected (B, {self.n}, 1) received batch, got {np.shape(y)}")
        return x

    def forward(self, y_batch) -> np.ndarray:
        """Posterior bit probabilities (B, ell) for a batch of received vectors."""
        x = self._coerce(y_batch)
        caches = []
        for conv, norm, relu in zip(self.convs, self.norms, self.relus):
            if self.train_mode:
                x, c_conv = conv.forward(x)
            else:
                x, c_conv = conv.infer_forward(x), None
            x, c_norm = norm.forward(x, self.train_mode)
            x, c_relu = relu.forward(x)
            caches.append((c_conv, c_norm, c_relu))
        B = x.shape[0]
        flat = x.reshape(B, self.n * self.channels[-1])
        p, c_head = self.head.forward(flat)
        if self.train_mode:
            self._caches = (caches, c_head)
        return p

    def backward(self, dloss_dp: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every trainable parameter, keyed like params()."""
        if not self.train_mode or self._caches is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        caches, c_head = self._caches
        grads: dict[str, np.ndarray] = {}
        dflat, g_head = self.head.backward(dloss_dp, c_head)
        grads["head.W"] = g_head["W"]
        grads["head.b"] = g_head["b"]
        B = dflat.shape[0]
        dx = dflat.reshape(B, self.n, self.channels[-1])
        for i in range(len(self.convs) - 1, -1, -1):
            c_conv, c_norm, c_relu = caches[i]
            dx = self.relus[i].backward(dx, c_relu)
            dx, g_norm = self.norms[i].backward(dx, c_norm)
            grads[f"norm{i}.gamma"] = g_norm["gamma"]
            grads[f"norm{i}.beta"] = g_norm["beta"]
            dx, g_conv = self.convs[i].backward(dx, c_conv)
            grads[f"conv{i}.W"] = g_conv["W"]
            grads[f"conv{i}.b"] = g_conv["b"]
        return grads

    # -- parameters --------------------------------------------------------
    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays in a stable order (update them in place)."""
        out: dict[str, np.ndarray] = {}
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out[f"conv{i}.W"] = conv.W
            out[f"conv{i}.b"] = conv.b
            out[f"norm{i}.gamma"] = norm.gamma
            out[f"norm{i}.beta"] = norm.beta
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out

    def running_stats(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, norm in enumerate(self.norms):
            out[f"norm{i}.running_mean"] = norm.running_mean
            out[f"norm{i}.running_var"] = norm.running_var
        return out

    def set_running_stats(self, stats: dict[str, np.ndarray]):
        for i, norm in enumerate(self.norms):
            norm.running_mean = stats[f"norm{i}.running_mean"].astype(self.dtype)
            norm.running_var = stats[f"norm{i}.running_var"].astype(self.dtype)

    def num_params(self) -> int:
        return sum(int(a.size) for a in self.params().values())

    # -- decoding ----------------------------------------------------------
    def predict(self, y_batch, micro_batch: int = 256) -> np.ndarray:
        """Infer-mode posteriors, slicing big batches to bound memory.

        Slicing cannot change the result: infer mode normalizes with running
        statistics, so outputs are independent of batch composition.
        """
        if self.train_mode:
            raise RuntimeError("predict() requires infer mode")
        x = self._coerce(y_batch)
        if x.shape[0] <= micro_batch:
            return self.forward(x)
        outs = [self.forward(x[i:i + micro_batch])
                for i in range(0, x.shape[0], micro_batch)]
        return np.concatenate(outs, axis=0)

    def decode_batch(self, y_batch, micro_batch: int = 256) -> np.ndarray:
        return (self.predict(y_batch, micro_batch) > 0.5).astype(np.uint8)


def cnn_decode(model: CnnDecoder, y) -> np.ndarray:
    """Quantize the posteriors of one received vector: bit = 1 iff p > 0.5."""
    y = np.asarray(y, dtype=np.float64)
    return model.decode_batch(y[None, :])[0]


class Adam:
    """Adam with bias correction; refuses non-finite gradients."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {name!r}; step refused")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
