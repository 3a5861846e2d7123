"""Independent reference implementations used to cross-check the package.

Everything in this file is deliberately written the slow, obvious way: plain
loops over profiles, no shared code with the library's table or tensor paths.
When a test compares a library result against a function here, the two values
reach the same quantity through disjoint code.
"""

import itertools
import math

import numpy as np

from regretlab import mechanisms as mech


# --- auction rules from the definitions --------------------------------------


def auction_outcome(kind, bids, values, units=1):
    """(utilities, revenue, winner set) by direct rule application.

    Highest bid wins (top ``units`` bids for the multi-unit rule), ties to the
    lowest index. Winners pay their bid; under all-pay everyone pays.
    """
    n = len(bids)
    k = units if kind == mech.KIND_MULTI_UNIT else 1
    order = sorted(range(n), key=lambda i: (-bids[i], i))
    winners = set(order[: min(k, n)])
    utilities = []
    revenue = 0.0
    for i in range(n):
        if kind == mech.KIND_ALL_PAY:
            revenue += bids[i]
            utilities.append((values[i] if i in winners else 0.0) - bids[i])
        elif i in winners:
            utilities.append(values[i] - bids[i])
            revenue += bids[i]
        else:
            utilities.append(0.0)
    return utilities, revenue, winners


def opt_welfare(kind, values, units=1):
    if kind == mech.KIND_MULTI_UNIT:
        return sum(sorted(values, reverse=True)[:units])
    return max(values)


def allocation_welfare(kind, bids, values, units=1):
    """Total value delivered to the winners; payments are pure transfers."""
    _, _, winners = auction_outcome(kind, bids, values, units)
    return sum(values[i] for i in winners)


def joint_bid_profiles(m):
    return itertools.product(*m.actions.grids)


# --- smoothness by brute force ------------------------------------------------


def deviation_slack(m, dists, lam, mu, values):
    """min over adversary profiles a of sum_i E[U_i(dev_i, a_-i; v_i)]
    - lam * Opt(v) + mu * R(a), with the expectation expanded termwise.

    ``dists`` is one mass vector per player over that player's grid.
    """
    opt = opt_welfare(m.kind, values, m.units)
    worst = math.inf
    for a in joint_bid_profiles(m):
        _, rev, _ = auction_outcome(m.kind, list(a), list(values), m.units)
        gain = 0.0
        for i in range(m.n):
            for w, b in zip(dists[i], m.actions.grids[i]):
                if w == 0.0:
                    continue
                bids = list(a)
                bids[i] = b
                u, _, _ = auction_outcome(m.kind, bids, list(values), m.units)
                gain += w * u[i]
        worst = min(worst, gain - lam * opt + mu * rev)
    return worst


def pure_maximin_lambda(m, mu, profiles):
    """Best lambda supported by per-profile deterministic deviations.

    For each valuation profile with positive optimum, maximize over joint
    pure deviations b the minimum over adversary profiles a of
    (sum_i U_i(b_i, a_-i) + mu R(a)) / Opt(v); return the min across profiles.
    """
    best_over_v = math.inf
    for values in profiles:
        opt = opt_welfare(m.kind, values, m.units)
        if opt <= 0.0:
            continue
        best = -math.inf
        for star in joint_bid_profiles(m):
            low = math.inf
            for a in joint_bid_profiles(m):
                _, rev, _ = auction_outcome(m.kind, list(a), list(values), m.units)
                gain = 0.0
                for i in range(m.n):
                    bids = list(a)
                    bids[i] = star[i]
                    u, _, _ = auction_outcome(m.kind, bids, list(values), m.units)
                    gain += u[i]
                low = min(low, (gain + mu * rev) / opt)
                if low < best:
                    break  # this star cannot beat the incumbent
            best = max(best, low)
        best_over_v = min(best_over_v, best)
    return best_over_v


# --- agent normal form by four nested loops ------------------------------------


def naive_agent_game(m, pops):
    """Agent-form payoff tensors from scratch.

    Agents are (population, type) pairs in population-major order. A joint
    commitment assigns one grid index per agent; each uniform type draw
    selects one agent per population, whose committed bid is played.
    """
    agents = [
        (p, t, pops[p][t]) for p in range(len(pops)) for t in range(len(pops[p]))
    ]
    sizes = [m.actions.size(p) for (p, _, _) in agents]
    seat_of = {}
    for g, (p, t, _) in enumerate(agents):
        seat_of[(p, t)] = g
    draws = list(itertools.product(*[range(len(vals)) for vals in pops]))
    n_sigma = 1
    for s in sizes:
        n_sigma *= s
    U = np.zeros((len(agents), n_sigma))
    R = np.zeros(n_sigma)
    w = 1.0 / len(draws)
    for flat, digits in enumerate(itertools.product(*[range(s) for s in sizes])):
        for draw in draws:
            chosen = [seat_of[(p, draw[p])] for p in range(len(pops))]
            vals = [agents[g][2] for g in chosen]
            bids = [m.actions.grids[p][digits[chosen[p]]] for p in range(len(pops))]
            u, rev, _ = auction_outcome(m.kind, bids, vals, m.units)
            R[flat] += w * rev
            for p, g in enumerate(chosen):
                U[g, flat] += w * u[p]
    e_opt = w * sum(
        opt_welfare(m.kind, [pops[p][d[p]] for p in range(len(pops))], m.units)
        for d in draws
    )
    return agents, sizes, U, R, e_opt


# --- CCE polytope minimum by vertex enumeration --------------------------------


def vertex_minimum(objective, rows, tol=1e-9):
    """Minimize c @ x over {x >= 0, sum x = 1, r @ x <= 0 for r in rows}.

    Exhaustive basic-feasible-point enumeration: every vertex satisfies the
    normalization equality plus K-1 independent tight inequalities, so trying
    all (K-1)-subsets and keeping the feasible solutions covers every vertex.
    Intended for K <= 16 only.
    """
    c = np.asarray(objective, dtype=float)
    K = c.size
    normals = [np.asarray(r, dtype=float) for r in rows]
    normals = [r for r in normals if np.abs(r).max() > 0.0]
    blocks = [-np.eye(K)]
    if normals:
        blocks.append(np.vstack(normals))
    N = np.vstack(blocks)
    rhs = np.zeros((K, 1))
    rhs[0, 0] = 1.0
    best = math.inf
    combos = itertools.combinations(range(N.shape[0]), K - 1)
    while True:
        batch = list(itertools.islice(combos, 20_000))
        if not batch:
            break
        idx = np.array(batch, dtype=np.int64)
        A = np.empty((len(batch), K, K))
        A[:, 0, :] = 1.0
        A[:, 1:, :] = N[idx]
        keep = np.abs(np.linalg.det(A)) > 1e-12
        if not keep.any():
            continue
        b = np.broadcast_to(rhs, (int(keep.sum()), K, 1))
        x = np.linalg.solve(A[keep], b)[:, :, 0]
        feasible = (x @ N.T <= tol).all(axis=1)
        if feasible.any():
            best = min(best, float((x[feasible] @ c).min()))
    return best


def pure_nash_welfares(U, sizes, revenue):
    """Welfare of every pure Nash profile of an agent game, found by direct
    exhaustive verification of the equilibrium condition. May be empty."""
    n_agents, n_sigma = U.shape
    strides = [1] * n_agents
    for g in range(n_agents - 2, -1, -1):
        strides[g] = strides[g + 1] * sizes[g + 1]
    welfares = []
    for s in range(n_sigma):
        digit = [(s // strides[g]) % sizes[g] for g in range(n_agents)]
        is_nash = True
        for g in range(n_agents):
            here = U[g, s]
            for a in range(sizes[g]):
                dev = s + (a - digit[g]) * strides[g]
                if U[g, dev] > here + 1e-12:
                    is_nash = False
                    break
            if not is_nash:
                break
        if is_nash:
            welfares.append(float(U[:, s].sum() + revenue[s]))
    return welfares


# --- learning references --------------------------------------------------------


def hedge_probabilities(utility_rows, etas):
    """Hedge sampling distribution after the given updates, in closed form:
    p proportional to exp(sum_t eta_t * u_t)."""
    rows = [np.asarray(u, dtype=float) for u in utility_rows]
    log_w = np.zeros(rows[0].size)
    for u, eta in zip(rows, etas):
        log_w += eta * u
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def regret_reference(utility_rows, chosen):
    """Time-averaged external regret over the recorded rounds."""
    rows = [np.asarray(u, dtype=float) for u in utility_rows]
    if not rows:
        return 0.0
    cumulative = np.sum(rows, axis=0)
    realized = sum(float(u[a]) for u, a in zip(rows, chosen))
    return float(cumulative.max() - realized) / len(rows)


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def t_star_arithmetic(delta, rho, n, sigma_size, v_size, H):
    """The sufficient-horizon formula, written out term by term."""
    cubic = (n * n * n) * (H * H * H) / (delta * delta * delta)
    return 54.0 * cubic * sigma_size * (v_size * v_size) * math.log(2.0 / rho)
