"""Reference computations written from first principles, sharing no code with ponslice."""

import math


def plan_oracle(clients, *, C=1e10, C_dl=1e10, dl_fraction=1.0, dist_km=20.0, per_km=5e-6,
                model_bits=26.416e6, t_current=0.0, h=1, T_round=6.0):
    """clients: list of (client_id, onu, T_UD, M). dist_km: scalar or per-onu list.

    Returns a dict with every planned quantity.
    """
    def dist(onu):
        return dist_km if isinstance(dist_km, (int, float)) else dist_km[onu]

    deltas = []
    for cid, onu, t_ud, m in clients:
        t_dl = model_bits / (C_dl * dl_fraction) + dist(onu) * per_km
        deltas.append((t_dl + t_ud, cid, onu, m))
    # straggler: largest delta, smallest id on ties
    best = None
    for d, cid, onu, m in deltas:
        if best is None or d > best[0] or (d == best[0] and cid < best[1]):
            best = (d, cid, onu, m)
    d_max, _, k_onu, k_m = best
    d_min = deltas[0][0]
    for d, *_ in deltas:
        if d < d_min:
            d_min = d
    nabla = k_m / C + dist(k_onu) * per_km
    t_max = d_max + nabla
    tau = t_max - d_min
    total = 0.0
    for *_, m in deltas:
        total += m
    raw = total / tau
    B = C if raw > C else raw
    base = t_current + h * T_round
    return {"delta": {cid: d for d, cid, _, _ in deltas}, "nabla": nabla, "T_max": t_max,
            "T_min": d_min, "tau": tau, "B": B, "capped": raw > C,
            "t_s": base + d_min, "t_e": base + t_max,
            "order": [cid for d, cid, _, _ in sorted(deltas, key=lambda x: (x[0], x[1]))]}


def greedy_oracle(ready_bits, B, opening):
    """Back-to-back slots in list order: start = max(prev end, ready, opening)."""
    out = []
    prev = opening
    for ready, bits in ready_bits:
        s = max(prev, ready, opening)
        e = s + bits / B
        out.append((s, e))
        prev = e
    return out


def md1_mean_wait(rho, service):
    """Pollaczek-Khinchine mean queueing delay for deterministic service."""
    return rho * service / (2.0 * (1.0 - rho))


def lerp(x0, y0, x1, y1, x):
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def fifo_oracle(arrivals, services):
    """Textbook single-server FIFO: (start, end) per job, loop form."""
    free = -math.inf
    out = []
    for a, s in zip(arrivals, services):
        st = a if a > free else free
        free = st + s
        out.append((st, free))
    return out
