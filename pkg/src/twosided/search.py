import math

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI_SQ = (3 - math.sqrt(5)) / 2


def golden_max(f, a, b, tol=1e-10):
    """Maximise a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    The endpoints are compared against the interior optimum so that
    maximisers sitting on the boundary are returned exactly.
    """
    a, b = min(a, b), max(a, b)
    lo, hi = a, b
    h = hi - lo
    if h > tol:
        n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
        c = lo + INV_PHI_SQ * h
        d = lo + INV_PHI * h
        fc, fd = f(c), f(d)
        for _ in range(n):
            if fc > fd:
                hi, d, fd = d, c, fc
                h *= INV_PHI
                c = lo + INV_PHI_SQ * h
                fc = f(c)
            else:
                lo, c, fc = c, d, fd
                h *= INV_PHI
                d = lo + INV_PHI * h
                fd = f(d)
    x = 0.5 * (lo + hi)
    best = (x, f(x))
    for end in (a, b):
        fe = f(end)
        if fe >= best[1]:
            best = (end, fe)
    return best
