"""Independent from-definition oracles shared by the test modules.

Everything here is deliberately written as plain loops over the defining
formulas, separate from the library's vectorized implementations.
"""

import numpy as np

from pansharp.image import cubic_kernel, gaussian_kernel_1d


def reflect_scalar(i: int, n: int) -> int:
    idx = np.arange(n)
    padded = np.pad(idx, (2 * n, 2 * n), mode="reflect") if n > 1 else np.zeros(4 * n + 1, int)
    return int(padded[i + 2 * n])


def bicubic_oracle(data: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = data.shape
    out = np.zeros((h * factor, w * factor, c))
    for oy in range(h * factor):
        sy = (oy + 0.5) / factor - 0.5
        by = int(np.floor(sy))
        for ox in range(w * factor):
            sx = (ox + 0.5) / factor - 0.5
            bx = int(np.floor(sx))
            acc = np.zeros(c)
            for dy in range(-1, 3):
                wy = cubic_kernel(np.array([sy - (by + dy)]))[0]
                iy = reflect_scalar(by + dy, h)
                for dx in range(-1, 3):
                    wx = cubic_kernel(np.array([sx - (bx + dx)]))[0]
                    ix = reflect_scalar(bx + dx, w)
                    acc += wy * wx * data[iy, ix]
            out[oy, ox] = acc
    return out


def conv2d_reflect_oracle(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Explicit 2-D correlation with reflect padding, per band."""
    r = (kernel.shape[0] - 1) // 2
    h, w, c = data.shape
    padded = np.pad(data.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="reflect")
    out = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            patch = padded[y:y + kernel.shape[0], x:x + kernel.shape[1]]
            out[y, x] = np.tensordot(kernel, patch, axes=([0, 1], [0, 1]))
    return out


def gaussian_oracle(data: np.ndarray, sigma: float) -> np.ndarray:
    k1 = gaussian_kernel_1d(sigma)
    return conv2d_reflect_oracle(data, np.outer(k1, k1))


def box_highpass_oracle(data: np.ndarray, size: int = 5) -> np.ndarray:
    kernel = np.full((size, size), 1.0 / size ** 2)
    return data.astype(np.float64) - conv2d_reflect_oracle(data, kernel)


def ssim_reference(a: np.ndarray, b: np.ndarray, window: int = 11,
                   sigma: float = 1.5, c1: float = 0.01 ** 2,
                   c2: float = 0.03 ** 2) -> float:
    """Windowed SSIM evaluated by explicit per-window loops, valid area only."""
    t = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    w2 = np.outer(k, k)
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, c = a.shape
    vals = []
    for band in range(c):
        band_vals = []
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                pa = a[y:y + window, x:x + window, band]
                pb = b[y:y + window, x:x + window, band]
                mx = (w2 * pa).sum()
                my = (w2 * pb).sum()
                vx = (w2 * pa * pa).sum() - mx * mx
                vy = (w2 * pb * pb).sum() - my * my
                cov = (w2 * pa * pb).sum() - mx * my
                band_vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                                 / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        vals.append(np.mean(band_vals))
    return float(np.mean(vals))


def q_oracle(x: np.ndarray, y: np.ndarray, block: int) -> float:
    """Wang-Bovik Q over non-overlapping blocks, straight from the formula."""
    h, w = x.shape
    vals = []
    for by in range(h // block):
        for bx in range(w // block):
            px = x[by * block:(by + 1) * block, bx * block:(bx + 1) * block].ravel()
            py = y[by * block:(by + 1) * block, bx * block:(bx + 1) * block].ravel()
            mx, my = px.mean(), py.mean()
            vx, vy = px.var(), py.var()
            cov = ((px - mx) * (py - my)).mean()
            den = (vx + vy) * (mx * mx + my * my)
            vals.append(0.0 if den == 0 else 4 * cov * mx * my / den)
    return float(np.mean(vals))


def quat_mult(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Hamilton product on (..., 4) arrays."""
    w1, x1, y1, z1 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    w2, x2, y2, z2 = r[..., 0], r[..., 1], r[..., 2], r[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def q4_oracle(a: np.ndarray, b: np.ndarray, block: int) -> float:
    """Quaternion Q4 from the definition, for 4-band images."""
    h, w, c = a.shape
    assert c == 4
    vals = []
    for by in range(h // block):
        for bx in range(w // block):
            z1 = a[by * block:(by + 1) * block, bx * block:(bx + 1) * block].reshape(-1, 4)
            z2 = b[by * block:(by + 1) * block, bx * block:(bx + 1) * block].reshape(-1, 4)
            m1 = z1.mean(axis=0)
            m2 = z2.mean(axis=0)
            c1 = z1 - m1
            c2 = z2 - m2
            cov = quat_mult(c1, quat_conj(c2)).mean(axis=0)
            v1 = np.linalg.norm(quat_mult(c1, quat_conj(c1)).mean(axis=0))
            v2 = np.linalg.norm(quat_mult(c2, quat_conj(c2)).mean(axis=0))
            n1 = np.linalg.norm(m1)
            n2 = np.linalg.norm(m2)
            den = (v1 + v2) * (n1 * n1 + n2 * n2)
            vals.append(0.0 if den == 0 else
                        4 * np.linalg.norm(cov) * n1 * n2 / den)
    return float(np.mean(vals))


def sam_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel arccos of the normalized inner product, degrees."""
    h, w, c = a.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            va = a[y, x].astype(np.float64)
            vb = b[y, x].astype(np.float64)
            na = np.linalg.norm(va)
            nb = np.linalg.norm(vb)
            if na == 0 or nb == 0:
                continue
            cos = np.clip(va @ vb / (na * nb), -1.0, 1.0)
            total += np.degrees(np.arccos(cos))
    return total / (h * w)


def ergas_oracle(f: np.ndarray, r: np.ndarray, ratio: int) -> float:
    c = r.shape[2]
    acc = 0.0
    for band in range(c):
        rmse = np.sqrt(np.mean((f[:, :, band].astype(np.float64)
                                - r[:, :, band].astype(np.float64)) ** 2))
        acc += (rmse / r[:, :, band].astype(np.float64).mean()) ** 2
    return float(100.0 / ratio * np.sqrt(acc / c))


def laplacian_reflect_oracle(x: np.ndarray) -> np.ndarray:
    kernel = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    return conv2d_reflect_oracle(x[:, :, None], kernel)[:, :, 0]


def scc_oracle(f: np.ndarray, p: np.ndarray) -> float:
    corrs = []
    for band in range(f.shape[2]):
        hf = laplacian_reflect_oracle(f[:, :, band].astype(np.float64)).ravel()
        hp = laplacian_reflect_oracle(
            p[:, :, min(band, p.shape[2] - 1)].astype(np.float64)).ravel()
        hf -= hf.mean()
        hp -= hp.mean()
        corrs.append((hf @ hp) / np.sqrt((hf @ hf) * (hp @ hp)))
    return float(np.mean(corrs))
