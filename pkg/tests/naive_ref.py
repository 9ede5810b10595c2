"""Loop-only reference implementations used as oracles by the tests.

Everything here is written with explicit Python loops and scalar
arithmetic (numpy arrays are used for storage only), independent of the
package's vectorized/compiled kernels, so agreement is meaningful.
"""
import math

import numpy as np


def out_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, w, bias=None, stride=1, padding=0, dilation=1, groups=1):
    n, c_in, h, wi = x.shape
    c_out, cig, k, _ = w.shape
    oh = out_size(h, k, stride, padding, dilation)
    ow = out_size(wi, k, stride, padding, dilation)
    cog = c_out // groups
    y = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for b in range(n):
        for co in range(c_out):
            g = co // cog
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cig):
                        for ky in range(k):
                            iy = oy * stride - padding + ky * dilation
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(k):
                                ix = ox * stride - padding + kx * dilation
                                if ix < 0 or ix >= wi:
                                    continue
                                acc += float(w[co, ci, ky, kx]) * float(x[b, g * cig + ci, iy, ix])
                    if bias is not None:
                        acc += float(bias[co])
                    y[b, co, oy, ox] = acc
    return y


def batchnorm_infer(x, gamma, beta, rm, rv, eps=1e-5):
    n, c, h, w = x.shape
    y = np.zeros_like(x, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            inv = 1.0 / math.sqrt(float(rv[ch]) + eps)
            for i in range(h):
                for j in range(w):
                    y[b, ch, i, j] = float(gamma[ch]) * (float(x[b, ch, i, j]) - float(rm[ch])) * inv + float(beta[ch])
    return y


def relu(x):
    y = np.zeros_like(x, dtype=np.float64)
    flat_x, flat_y = x.ravel(), y.ravel()
    for i in range(flat_x.size):
        v = float(flat_x[i])
        flat_y[i] = v if v > 0.0 else 0.0
    return y


def sigmoid(x):
    y = np.zeros_like(x, dtype=np.float64)
    flat_x, flat_y = x.ravel(), y.ravel()
    for i in range(flat_x.size):
        flat_y[i] = 1.0 / (1.0 + math.exp(-float(flat_x[i])))
    return y


def _axis_coords(in_size, out_size_):
    scale = in_size / out_size_
    coords = []
    for i in range(out_size_):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, in_size - 1)
        coords.append((lo, hi, src - lo))
    return coords


def resize_bilinear(x, oh, ow):
    n, c, h, w = x.shape
    if (oh, ow) == (h, w):
        return x.astype(np.float64).copy()
    ys = _axis_coords(h, oh)
    xs = _axis_coords(w, ow)
    y = np.zeros((n, c, oh, ow), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                ylo, yhi, fy = ys[oy]
                for ox in range(ow):
                    xlo, xhi, fx = xs[ox]
                    top = float(x[b, ch, ylo, xlo])
                    bot = float(x[b, ch, yhi, xlo])
                    left = top + fy * (bot - top)
                    top = float(x[b, ch, ylo, xhi])
                    bot = float(x[b, ch, yhi, xhi])
                    right = top + fy * (bot - top)
                    y[b, ch, oy, ox] = left + fx * (right - left)
    return y


def regroup(branches):
    """Interleave four (n,c,h,w) maps so channels [4j..4j+3] hold channel
    j of each branch in order."""
    n, c, h, w = branches[0].shape
    y = np.zeros((n, 4 * c, h, w), dtype=np.float64)
    for j in range(c):
        for k in range(4):
            y[:, 4 * j + k] = branches[k][:, j]
    return y


class NaiveNet:
    """Inference-mode replay of the full network from its weight table,
    using only the loop kernels above."""

    def __init__(self, net):
        self.cfg = net.cfg
        self.p = {name: t.data.astype(np.float64) for name, t in net.named_params()}
        self.b = {name: buf.astype(np.float64) for name, buf in net.named_buffers()}

    def _cbr(self, prefix, x, stride=1, padding=0, dilation=1, groups=1):
        y = conv2d(x, self.p[prefix + ".conv.weight"], None,
                   stride, padding, dilation, groups)
        y = batchnorm_infer(y, self.p[prefix + ".bn.gamma"], self.p[prefix + ".bn.beta"],
                            self.b[prefix + ".bn.running_mean"], self.b[prefix + ".bn.running_var"])
        return relu(y)

    def _dsconv(self, prefix, x, stride=1, dilation=1):
        c_in = x.shape[1]
        pad = dilation if stride == 1 else 1
        y = self._cbr(prefix + ".dw", x, stride, pad, dilation, groups=c_in)
        return self._cbr(prefix + ".pw", y)

    def _mi(self, prefix, x):
        c = x.shape[1]
        branches = [conv2d(x, self.p[f"{prefix}.dw{i}.weight"], None,
                           1, d, d, groups=c)
                    for i, d in enumerate((1, 2, 4, 8))]
        y = conv2d(regroup(branches), self.p[prefix + ".group_pw.weight"], None, groups=c)
        y = conv2d(y, self.p[prefix + ".mix_pw.weight"], None)
        return relu(y + x)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        cfg = self.cfg
        feats = []
        y = self._cbr("encoder.stage1", x, stride=2, padding=1)
        feats.append(y)
        for s in range(2, 6):
            y = self._dsconv(f"encoder.stage{s}_entry", y, stride=2)
            for m in range(cfg.mi_counts[s - 2]):
                y = self._mi(f"encoder.stage{s}_mi{m}", y)
            feats.append(y)

        decoded = [None] * 5
        d = self._decoder(5, feats[4])
        decoded[4] = d
        for i in range(4, 0, -1):
            up = resize_bilinear(d, feats[i - 1].shape[2], feats[i - 1].shape[3])
            d = self._decoder(i, feats[i - 1] + up)
            decoded[i - 1] = d

        h_in, w_in = x.shape[2], x.shape[3]
        outs = []
        for i in range(1, 6):
            s = conv2d(decoded[i - 1], self.p[f"head{i}.conv.weight"],
                       self.p[f"head{i}.conv.bias"])
            outs.append(resize_bilinear(sigmoid(s), h_in, w_in))
        return outs

    def _decoder(self, i, x):
        y = self._dsconv(f"decoder{i}.ds1", x, dilation=2)
        return self._dsconv(f"decoder{i}.ds2", y, dilation=1)


# -- metric twins (independent literal-formula implementations) ---------------

def naive_mae(s, g):
    h, w = s.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += abs(float(s[i, j]) - (1.0 if g[i, j] > 0.5 else 0.0))
    return total / (h * w)


def naive_counts(b, gb):
    tp = fp = fn = 0
    h, w = b.shape
    for i in range(h):
        for j in range(w):
            if b[i, j] and gb[i, j]:
                tp += 1
            elif b[i, j]:
                fp += 1
            elif gb[i, j]:
                fn += 1
    return tp, fp, fn


def naive_sm(s, g):
    """Structure measure written directly from the published formulas."""
    gb = g > 0.5
    h, w = gb.shape
    y = gb.mean()
    if y == 0:
        return 1.0 - s.mean()
    if y == 1:
        return float(s.mean())

    def obj(x):
        if x.size == 0:
            return 0.0
        m, sd = x.mean(), x.std()
        return 2.0 * m / (m * m + 1.0 + sd + np.spacing(1))

    s_obj = y * obj(s[gb]) + (1 - y) * obj(1.0 - s[~gb])

    rows, cols = np.nonzero(gb)
    cy = int(np.floor(rows.mean())) + 1
    cx = int(np.floor(cols.mean())) + 1

    def ssim_region(p, q):
        n = p.size
        if n <= 1:
            return 1.0 if p == q else 0.0
        mp, mq = p.mean(), q.mean()
        vp = ((p - mp) ** 2).sum() / (n - 1)
        vq = ((q - mq) ** 2).sum() / (n - 1)
        cov = ((p - mp) * (q - mq)).sum() / (n - 1)
        a, bb = 4.0 * mp * mq * cov, (mp * mp + mq * mq) * (vp + vq)
        if a != 0:
            return a / (bb + np.spacing(1))
        return 1.0 if bb == 0 else 0.0

    region = 0.0
    for rs, re, cs, ce in ((0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)):
        weight = (re - rs) * (ce - cs) / (h * w)
        region += weight * ssim_region(s[rs:re, cs:ce].ravel(),
                                       gb[rs:re, cs:ce].astype(np.float64).ravel())
    return float(max(0.0, 0.5 * s_obj + 0.5 * region))


def naive_wf(s, g, beta2=1.0, sigma=5.0):
    """Weighted F-measure from the definition: explicit nearest-foreground
    search (averaging over all ties), explicit full Gaussian sums."""
    gb = g > 0.5
    h, w = gb.shape
    if not gb.any():
        return 1.0 if not (s >= 0.5).any() else 0.0
    fg = [(i, j) for i in range(h) for j in range(w) if gb[i, j]]
    e = np.abs(s - gb.astype(np.float64))

    et = e.copy()
    d2 = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if gb[i, j]:
                continue
            best = None
            vals = []
            for (fi, fj) in fg:
                dd = (fi - i) ** 2 + (fj - j) ** 2
                if best is None or dd < best:
                    best, vals = dd, [e[fi, fj]]
                elif dd == best:
                    vals.append(e[fi, fj])
            d2[i, j] = best
            et[i, j] = sum(vals) / len(vals)

    ea = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            num = den = 0.0
            for a in range(h):
                for b in range(w):
                    wgt = math.exp(-((a - i) ** 2 + (b - j) ** 2) / (2 * sigma ** 2))
                    num += wgt * et[a, b]
                    den += wgt
            ea[i, j] = num / den

    min_e_ea = e.copy()
    for i in range(h):
        for j in range(w):
            if gb[i, j] and ea[i, j] < e[i, j]:
                min_e_ea[i, j] = ea[i, j]
    b_map = np.ones((h, w))
    for i in range(h):
        for j in range(w):
            if not gb[i, j]:
                b_map[i, j] = 2.0 - math.exp(math.log(0.5) / sigma * math.sqrt(d2[i, j]))
    ew = min_e_ea * b_map
    nfg = gb.sum()
    tpw = nfg - ew[gb].sum()
    fpw = ew[~gb].sum()
    recall = 1.0 - ew[gb].mean()
    precision = tpw / (tpw + fpw + 1e-12)
    den = beta2 * precision + recall
    if den <= 1e-12:
        return 0.0
    return float((1 + beta2) * precision * recall / (den + 1e-12))


def naive_boundary(mask):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ni, nj = i + di, j + dj
                if ni < 0 or ni >= h or nj < 0 or nj >= w or not mask[ni, nj]:
                    out[i, j] = True
                    break
    return out


def naive_pfom(s, g, alpha=1.0 / 9.0):
    det_b = naive_boundary(s >= 0.5)
    gt_b = naive_boundary(g > 0.5)
    n_d, n_g = int(det_b.sum()), int(gt_b.sum())
    if n_g == 0:
        return 1.0 if n_d == 0 else 0.0
    if n_d == 0:
        return 0.0
    gt_pts = [(i, j) for i in range(gt_b.shape[0]) for j in range(gt_b.shape[1]) if gt_b[i, j]]
    total = 0.0
    for i in range(det_b.shape[0]):
        for j in range(det_b.shape[1]):
            if not det_b[i, j]:
                continue
            d2 = min((i - a) ** 2 + (j - b) ** 2 for a, b in gt_pts)
            total += 1.0 / (1.0 + alpha * d2)
    return total / max(n_d, n_g)
