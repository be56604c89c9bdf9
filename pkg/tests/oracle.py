"""Brute-force reference implementations of all six rollout metrics.

Written as direct per-item loops over the metric definitions, sharing no code
with the package under test. Documented conventions (grid-cell edges,
population std, tie handling, zero conventions, clamps) are part of the metric
contracts and are therefore reproduced here, but every computation path is
independent.
"""

from __future__ import annotations

import math

import numpy as np


def _gray(frame) -> np.ndarray:
    return frame.data.astype(np.float64).mean(axis=2)


def embed(frames, grid: int) -> np.ndarray:
    h, w = frames[0].height, frames[0].width
    g = min(grid, h, w)
    stacked = []
    for f in frames:
        img = _gray(f)
        means = []
        stds = []
        for r in range(g):
            r0, r1 = (r * h) // g, ((r + 1) * h) // g
            for c in range(g):
                c0, c1 = (c * w) // g, ((c + 1) * w) // g
                cell = img[r0:r1, c0:c1]
                mu = float(cell.sum() / cell.size)
                var = float(((cell - mu) ** 2).sum() / cell.size)
                means.append(mu)
                stds.append(math.sqrt(var))
        stacked.append(means + stds)
    vec = np.asarray(stacked).mean(axis=0)
    norm = math.sqrt(float((vec * vec).sum()))
    return vec / norm if norm > 0.0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = math.sqrt(float((a * a).sum()))
    nb = math.sqrt(float((b * b).sum()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float((a * b).sum()) / (na * nb)))


def perceptual(a, b, grid: int) -> float:
    ea, eb = embed([a], grid), embed([b], grid)
    if not ea.any() and not eb.any():
        return 0.0
    return min(2.0, max(0.0, 1.0 - cosine(ea, eb)))


def _magnitude(flow) -> np.ndarray:
    return np.hypot(flow.u.astype(np.float64), flow.v.astype(np.float64))


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    if n % 2 == 1:
        return ordered[n // 2]
    return 0.5 * (ordered[n // 2 - 1] + ordered[n // 2])


def _top_mean(values: list[float], fraction: float) -> float:
    ordered = sorted(values, reverse=True)
    k = math.ceil(fraction * len(ordered))
    return sum(ordered[:k]) / k


def _entropy(values: list[float], bins: int = 16) -> float:
    peak = max(values)
    if peak <= 0.0:
        return 0.0
    counts = [0] * bins
    for v in values:
        counts[min(int(v / peak * bins), bins - 1)] += 1
    total = len(values)
    h = 0.0
    for c in counts:
        if c:
            p = c / total
            h -= p * math.log(p)
    return h / math.log(bins)


def flow_stats(flow, fraction: float = 0.2) -> tuple[float, float, float]:
    mags = list(_magnitude(flow).ravel())
    return _median(mags), _top_mean(mags, fraction), _entropy(mags)


def _log_ratio(median: float, top: float) -> float:
    if median > 0.0:
        return min(20.0, math.log(1.0 + top / median))
    if top > 0.0:
        return min(20.0, math.log(1.0 + top / 1e-6))
    return 20.0


def profile(chunk, fraction: float = 0.2) -> list[list[float]]:
    f0 = chunk.frames[0]
    diag = math.hypot(f0.width, f0.height)
    rows = []
    for flow in chunk.flows:
        median, top, entropy = flow_stats(flow, fraction)
        rows.append([median / diag, top / diag, _log_ratio(median, top), entropy])
    return rows


def resample(rows: list[list[float]], target: int) -> list[list[float]]:
    n = len(rows)
    out = []
    for i in range(target):
        pos = 0.0 if target == 1 else i * (n - 1) / (target - 1)
        lo = min(int(math.floor(pos)), n - 1)
        hi = min(lo + 1, n - 1)
        frac = pos - lo
        out.append([(1.0 - frac) * rows[lo][c] + frac * rows[hi][c] for c in range(4)])
    return out


def _smatch(x: float, y: float, eps: float) -> float:
    x, y = max(x, eps), max(y, eps)
    return math.exp(-abs(math.log(x / y)))


def _mean_mag(flow) -> float:
    mags = _magnitude(flow)
    return float(mags.sum() / mags.size)


def rcbd(gen, gt, cfg) -> float | None:
    k = len(gen.chunks)
    if k < 2:
        return None
    scores = []
    for i in range(k - 1):
        b_gen = perceptual(gen.chunks[i].frames[-1], gen.chunks[i + 1].frames[0], cfg.embedder.grid)
        b_gt = perceptual(gt.chunks[i].frames[-1], gt.chunks[i + 1].frames[0], cfg.embedder.grid)
        m_gen = abs(_mean_mag(gen.chunks[i].flows[-1]) - _mean_mag(gen.chunks[i + 1].flows[0]))
        m_gt = abs(_mean_mag(gt.chunks[i].flows[-1]) - _mean_mag(gt.chunks[i + 1].flows[0]))
        scores.append(math.sqrt(_smatch(b_gen, b_gt, cfg.eps) * _smatch(m_gen, m_gt, cfg.eps)))
    return sum(scores) / len(scores)


def lpsa(gen, gt, cfg) -> float:
    k = len(gen.chunks)
    num = 0.0
    den = 0.0
    for i in range(k):
        w_gen = min(cfg.lpsa_window, len(gen.chunks[i].frames))
        w_gt = min(cfg.lpsa_window, len(gt.chunks[i].frames))
        e_gen = embed(list(gen.chunks[i].frames[-w_gen:]), cfg.embedder.grid)
        e_gt = embed(list(gt.chunks[i].frames[-w_gt:]), cfg.embedder.grid)
        num += (i + 1) * cosine(e_gen, e_gt)
        den += i + 1
    return num / den


def cisr(gen, gt, cfg) -> float:
    k = len(gen.chunks)
    gen_emb = [embed(list(c.frames), cfg.embedder.grid) for c in gen.chunks]
    gt_emb = [embed(list(c.frames), cfg.embedder.grid) for c in gt.chunks]
    total = 0.0
    for i in range(k):
        sims = [cosine(gen_emb[i], gt_emb[j]) for j in range(k)]
        rank = sum(1 for s in sims if s >= sims[i])  # pessimistic on ties
        total += 1.0 / rank
    return total / k


def pmpa(gen, gt, cfg) -> float | None:
    scores = []
    for cg, ct in zip(gen.chunks, gt.chunks):
        if len(cg.frames) < 2 or len(ct.frames) < 2:
            continue
        p_gen = resample(profile(cg, cfg.top_fraction), cfg.resample_steps)
        p_gt = resample(profile(ct, cfg.top_fraction), cfg.resample_steps)
        delta = sum(
            math.sqrt(sum((a - b) ** 2 for a, b in zip(ra, rb)))
            for ra, rb in zip(p_gen, p_gt)
        ) / cfg.resample_steps
        scores.append(math.exp(-delta / cfg.tau_pmpa))
    if not scores:
        return None
    return sum(scores) / len(scores)


def cpdm(gen, gt, cfg) -> float | None:
    phases = [c.phase for c in gt.chunks]
    if len(set(phases)) < 2:
        return None
    k = len(gen.chunks)
    gen_emb = [embed(list(c.frames), cfg.embedder.grid) for c in gen.chunks]
    gt_emb = [embed(list(c.frames), cfg.embedder.grid) for c in gt.chunks]
    total = 0.0
    for i in range(k):
        r_pos = cosine(gen_emb[i], gt_emb[i])
        r_neg = max(cosine(gen_emb[i], gt_emb[j]) for j in range(k) if phases[j] != phases[i])
        z = (r_pos - r_neg) / cfg.tau_cpdm
        total += 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return total / k


def fphs(gen, gt, cfg) -> float | None:
    phases = [c.phase for c in gt.chunks]
    switches = [i for i in range(1, len(phases)) if phases[i - 1] != phases[i]]
    if not switches:
        return None
    scores = []
    for k1 in switches:
        gt_left, gt_right = gt.chunks[k1 - 1], gt.chunks[k1]
        gen_left, gen_right = gen.chunks[k1 - 1], gen.chunks[k1]
        w_left = min(cfg.fphs_window, len(gt_left.frames))
        w_right = min(cfg.fphs_window, len(gt_right.frames))
        h, w = gt_left.frames[0].height, gt_left.frames[0].width
        acc = np.zeros((h, w))
        if w_left >= 2:
            for f in gt_left.flows[-(w_left - 1):]:
                acc += _magnitude(f)
        if w_right >= 2:
            for f in gt_right.flows[: w_right - 1]:
                acc += _magnitude(f)
        flat = sorted(acc.ravel(), reverse=True)
        cutoff = flat[math.ceil(cfg.top_fraction * len(flat)) - 1]
        region = acc >= cutoff
        rows = [r for r in range(h) if region[r].any()]
        cols = [c for c in range(w) if region[:, c].any()]
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1

        def cropped(frames):
            from wemeval.rollout import Frame

            return [Frame(data=f.data[r0:r1, c0:c1, :]) for f in frames]

        gen_window = list(gen_left.frames[-w_left:]) + list(gen_right.frames[:w_right])
        gt_window = list(gt_left.frames[-w_left:]) + list(gt_right.frames[:w_right])
        e_gen = embed(cropped(gen_window), cfg.embedder.grid)
        e_gt = embed(cropped(gt_window), cfg.embedder.grid)
        scores.append(cosine(e_gen, e_gt))
    return sum(scores) / len(scores)


def all_metrics(gen, gt, cfg) -> dict[str, float | None]:
    return {
        "rcbd": rcbd(gen, gt, cfg),
        "lpsa": lpsa(gen, gt, cfg),
        "cisr": cisr(gen, gt, cfg),
        "pmpa": pmpa(gen, gt, cfg),
        "cpdm": cpdm(gen, gt, cfg),
        "fphs": fphs(gen, gt, cfg),
    }
