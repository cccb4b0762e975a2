"""End-to-end acceptance suite.

Each test checks one shipped guarantee of the package on the 2-d benchmark
tensor (or a 1-d laminate where noted) and prints a single PASS/FAIL line
with the measured numbers, so a test log doubles as a convergence report.
Tolerances are fixed here and are not tuned per machine.
"""

import functools
import math
import time

import numpy as np
import pytest

import cellhom as ch
from cellhom import BoxFilter, MethodParams, StepControl, make_filter
from cellhom.timestepping import evolve_heat

A0_EXACT = np.diag([0.2, 20.0 / 41.0])


def _verdict(capsys, num, label, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num}] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} ({label}): {detail}"


@functools.lru_cache(maxsize=None)
def _benchmark():
    return ch.benchmark_tensor_2d()


@functools.lru_cache(maxsize=None)
def _reference(h):
    """Same-mesh periodic reference used by the error sweeps."""
    return ch.solve_periodic_reference(_benchmark(), h).values


def _sin_field_1d():
    return ch.TensorField(
        dim=1,
        fn=lambda y: (2.0 + np.sin(2.0 * np.pi * y[..., 0]))[..., None, None],
        alpha=1.0,
        beta=3.0,
        name="sin-1d",
    )


def test_criterion_1_periodic_reference_laminate(capsys):
    """Periodic reference reproduces diag(1/5, 20/41) with O(h^2) accuracy."""
    errs = {}
    for h in (1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0):
        vals = ch.solve_periodic_reference(_benchmark(), h).values
        errs[h] = float(np.linalg.norm(vals - A0_EXACT))
    order = -np.polyfit(np.log([16.0, 32.0, 64.0]), np.log(list(errs.values())), 1)[0]
    ok = errs[1.0 / 64.0] <= 1e-3 and order >= 1.7
    _verdict(capsys, 1, "analytic laminate oracle", ok,
             f"err(h=1/64)={errs[1.0/64.0]:.3e} (tol 1e-3), order={order:.2f} (>= 1.7)")


def test_criterion_2_classical_first_order_resonance(capsys):
    """Classical truncated-Dirichlet slope on the fixed non-integer grid.

    The acceptance window is [-1.3, -0.7] on R in {2.5, 3.5, 5.5, 7.5, 9.5}.
    Measured behaviour of the solver: the error curve splits into two
    R mod 2 phase families, each decaying at slope ~ -1 but offset by a
    factor ~6 (window-average phase + lateral wall layers); the fixed grid
    mixes the families, which steepens the mixed-grid fit to ~ -1.85.
    The assertion keeps the specified window; see the sweep CLI for the
    single-family curves.
    """
    h = 1.0 / 32.0
    ref = _reference(h)
    grid = [2.5, 3.5, 5.5, 7.5, 9.5]
    errs = []
    for R in grid:
        vals = ch.solve_elliptic_dirichlet(_benchmark(), R, h).values
        errs.append(float(np.linalg.norm(vals - ref)))
    slope = float(np.polyfit(np.log(grid), np.log(errs), 1)[0])
    ok = -1.3 <= slope <= -0.7
    _verdict(capsys, 2, "classical O(1/R) resonance", ok,
             f"slope={slope:.3f}, window [-1.3, -0.7], errs={[f'{e:.4f}' for e in errs]}")


def test_criterion_3_parabolic_filter_rates(capsys):
    """Parabolic method with k_o=1/2: q=1 slope <= -1.7, q=3 slope <= -3.3.

    One trajectory per R feeds both filters (the evolution does not depend
    on q), which keeps the whole sweep within the runtime budget.
    """
    t0 = time.perf_counter()
    fld = _benchmark()
    h = 1.0 / 32.0
    ref = _reference(h)
    grid = [2.5, 3.5, 4.5, 5.5, 6.5, 7.5]
    errs = {1: [], 3: []}
    for R in grid:
        p1 = ch.optimal_params("parabolic", R, q=1, k_o=0.5, alpha=fld.alpha, beta=fld.beta)
        p3 = ch.optimal_params("parabolic", R, q=3, k_o=0.5, alpha=fld.alpha, beta=fld.beta)
        traj = ch.evolve_parabolic(
            fld, R, h, p1.T,
            filters=[BoxFilter(base=make_filter(1), L=p1.L, dim=2),
                     BoxFilter(base=make_filter(3), L=p3.L, dim=2)],
            control=StepControl(rtol=1e-5),
        )
        errs[1].append(float(np.linalg.norm(ch.upscale_parabolic(fld, p1, traj).values - ref)))
        errs[3].append(float(np.linalg.norm(ch.upscale_parabolic(fld, p3, traj).values - ref)))
    s1 = float(np.polyfit(np.log(grid), np.log(errs[1]), 1)[0])
    s3 = float(np.polyfit(np.log(grid), np.log(errs[3]), 1)[0])
    elapsed = time.perf_counter() - t0
    ok = s1 <= -1.7 and s3 <= -3.3 and elapsed < 600.0
    _verdict(capsys, 3, "parabolic filtered-average rates", ok,
             f"q=1 slope={s1:.3f} (<= -1.7), q=3 slope={s3:.3f} (<= -3.3), "
             f"runtime={elapsed:.0f}s (< 600s)")


def test_criterion_4_modified_elliptic_vs_classical(capsys):
    """Modified elliptic (N=60): at/below classical for R >= 3; q=3 slope <= -3.

    The sweep uses the R mod 2 = 0.5 family so the classical comparison
    curve sits on a single phase branch.  Measured: both filter orders beat
    the classical error at every swept R >= 3 by a factor >= 2.4, but the
    q-independent lateral boundary term of this protocol (exponent
    pi*k_o/sqrt(8*beta/alpha) per unit R, which is weak at contrast
    beta/alpha ~ 21) dominates both curves, so the fitted q=3 slope lands
    near -2.3 rather than below -3.0.  The assertion keeps the specified
    bound.  With the shorter horizon T = k_o R/(pi sqrt(4 beta alpha)) the
    solver reproduces the published mid-range errors of this method to
    within ~20%, so the gap is a property of the pinned parameter choice,
    not of the solver.
    """
    t0 = time.perf_counter()
    fld = _benchmark()
    h = 1.0 / 32.0
    ref = _reference(h)
    grid = [2.5, 4.5, 6.5, 8.5]
    err_mod = {1: [], 3: []}
    err_cla = []
    for R in grid:
        p = ch.optimal_params("modified-elliptic", R, q=1, k_o=0.5,
                              alpha=fld.alpha, beta=fld.beta)
        assert p.N == 60
        mod = ch.solve_modified_elliptic(
            fld, p, h,
            filters=[BoxFilter(base=make_filter(1), L=p.L, dim=2),
                     BoxFilter(base=make_filter(3), L=p.L, dim=2)],
        )
        v1, v3 = mod.diagnostics["values_per_filter"]
        err_mod[1].append(float(np.linalg.norm(v1 - ref)))
        err_mod[3].append(float(np.linalg.norm(v3 - ref)))
        err_cla.append(float(np.linalg.norm(
            ch.solve_elliptic_dirichlet(fld, R, h).values - ref)))
    dominated = all(
        err_mod[q][i] <= err_cla[i]
        for q in (1, 3) for i, R in enumerate(grid) if R >= 3.0
    )
    s3 = float(np.polyfit(np.log(grid), np.log(err_mod[3]), 1)[0])
    elapsed = time.perf_counter() - t0
    ok = dominated and s3 <= -3.0 and elapsed < 600.0
    _verdict(capsys, 4, "modified elliptic vs classical", ok,
             f"below-classical(R>=3)={dominated}, q=3 slope={s3:.3f} (<= -3.0), "
             f"runtime={elapsed:.0f}s")


def test_criterion_5_stationary_parabolic_equivalence(capsys):
    """1-d identity suite: psi_R = int_0^T u dt, the energy identity, and
    the q=0 full-window infinite-horizon corollary, all to 1e-4."""
    fld = _sin_field_1d()
    R, h = 3.0, 1.0 / 32.0
    grid = ch.build_grid(1, R, int(round(R / h)), bc="dirichlet")
    fem = ch.assemble(fld, grid)
    K, M, b = fem.stiffness, fem.mass, fem.loads[0]

    lam1 = ch.smallest_eigpairs(K, M, N=1).lambdas[0]
    T = math.log(1e8) / lam1  # e^{-lam1 T} <= 1e-8

    # (a) corrector equals the time integral of the heat trajectory
    import scipy.sparse.linalg as spla
    psi = spla.spsolve(K.mat.tocsr(), b)
    u0 = ch.cg_solve(M, b, tol=1e-13)[0]
    acc = {"int_u": np.zeros_like(b), "int_uu": 0.0}

    def observer(t_old, U_old, t_new, U_new):
        dt = t_new - t_old
        acc["int_u"] += 0.5 * dt * (U_old[:, 0] + U_new[:, 0])
        acc["int_uu"] += 0.5 * dt * (U_old[:, 0] @ M.matvec(U_old[:, 0])
                                     + U_new[:, 0] @ M.matvec(U_new[:, 0]))

    evolve_heat(K, M, u0[:, None], T, control=StepControl(rtol=1e-8),
                observer=observer)
    diff = acc["int_u"] - psi
    err_a = math.sqrt(diff @ M.matvec(diff))

    # (b) energy identity: 1/2 psi' K psi = int_0^inf (u, u)_M dt
    lhs = 0.5 * (psi @ K.matvec(psi))
    err_b = abs(acc["int_uu"] - lhs) / abs(lhs)

    # (c) q=0, L=R, T->infty parabolic equals the elliptic tensor
    T_inf = math.log(1e10) / lam1
    params = MethodParams(R=R, L=R, T=T_inf, q=0, k_o=0.0, k_T=0.0)
    traj = ch.evolve_parabolic(fld, R, h, T_inf,
                               filters=[BoxFilter(base=make_filter(0), L=R, dim=1)],
                               control=StepControl(rtol=1e-8))
    par = ch.upscale_parabolic(fld, params, traj).values
    ell = ch.solve_elliptic_dirichlet(fld, R, h).values
    err_c = float(np.linalg.norm(par - ell))

    ok = err_a <= 1e-4 and err_b <= 1e-4 and err_c <= 1e-4
    _verdict(capsys, 5, "stationary/parabolic equivalence", ok,
             f"|psi - int u|_M={err_a:.2e}, energy rel={err_b:.2e}, "
             f"corollary={err_c:.2e} (all <= 1e-4)")


def test_criterion_6_spectral_correction_limit(capsys):
    """With every mode retained the corrected corrector equals int_0^T u dt;
    truncating to N modes decays in an exponential envelope exp(-lam_{N+1} T).

    The window is deliberately NOT an integer number of coefficient periods:
    on integer windows the load is orthogonal to every even mode except the
    resonant one (the divergence load integrates the coefficient's single
    frequency against the window harmonics), which turns the error-vs-N
    curve into a staircase.  R = 2.8 keeps every mode weight alive.
    """
    fld = _sin_field_1d()
    grid = ch.build_grid(1, 2.8, 90, bc="dirichlet")
    fem = ch.assemble(fld, grid)
    K, M, b = fem.stiffness, fem.mass, fem.loads[0]
    n = K.mat.shape[0]
    assert n <= 200

    pairs = ch.smallest_eigpairs(K, M, N=n)
    lam1 = pairs.lambdas[0]
    T = 0.2 / lam1  # modest horizon: several modes still carry weight

    u0 = ch.cg_solve(M, b, tol=1e-13)[0]
    acc = np.zeros_like(b)

    def observer(t_old, U_old, t_new, U_new):
        acc[:] += 0.5 * (t_new - t_old) * (U_old[:, 0] + U_new[:, 0])

    evolve_heat(K, M, u0[:, None], T, control=StepControl(rtol=1e-8),
                observer=observer)

    import scipy.sparse.linalg as spla
    lu = spla.splu(K.mat.tocsc())

    def chi_n(N):
        V = pairs.vectors[:, :N]
        w = np.exp(-pairs.lambdas[:N] * T)
        g = b @ V
        return lu.solve(b - (M.mat @ V) @ (w * g))

    err_all = np.linalg.norm(chi_n(n) - acc) / np.linalg.norm(acc)

    Ns = np.arange(1, 9)
    errs = np.array([np.linalg.norm(chi_n(N) - acc) for N in Ns])
    # below ~1e-7 relative the truncation error sinks under the
    # time-integration floor, so decay statements only apply above it
    live = errs > 1e-7 * np.linalg.norm(acc)
    monotone = bool(np.all(np.diff(errs[live]) < 0.0))
    lam_next = pairs.lambdas[Ns[live]]  # lambda_{N+1} for each kept N
    env_slope = float(np.polyfit(lam_next * T, np.log(errs[live]), 1)[0])
    envelope_ok = -1.3 <= env_slope <= -0.7

    ok = err_all <= 1e-6 and monotone and envelope_ok
    _verdict(capsys, 6, "spectral correction limit", ok,
             f"N=all rel err={err_all:.2e} (<= 1e-6), monotone={monotone}, "
             f"envelope slope={env_slope:.2f} vs -1")


def test_criterion_7_filter_axioms(capsys):
    """Unit mass, nonnegativity, boundary flatness, and averaging rate >= q+1."""
    pts, wts = np.polynomial.legendre.leggauss(500)
    ok_all, details = True, []
    rng = np.random.default_rng(0)
    for q in (0, 1, 2, 3, 5):
        f = make_filter(q)
        mass = 0.5 * np.sum(wts * f(0.5 * pts))
        unit = abs(mass - 1.0) < 1e-12
        nonneg = bool(np.all(f(rng.uniform(-0.7, 0.7, 1000)) >= 0.0))
        flat = all(abs(f.derivative(s * 0.5, k)) < 1e-11
                   for k in range(q) for s in (-1.0, 1.0))

        # filtered average of sin(2 pi y + 0.7) + 2 converges at rate >= q+1.
        # |err|(L) oscillates with period ~1 in L and has deep nulls, so a
        # raw least-squares fit is badly biased; fit the local maxima of a
        # dense grid instead, which ride the decay envelope C L^-(q+1).
        Ls = np.linspace(3.3, 13.3, 321)
        errs = np.empty_like(Ls)
        for i, L in enumerate(Ls):
            y = 0.5 * L * pts
            avg = 0.5 * np.sum(wts * f(y / L) * (np.sin(2 * np.pi * y + 0.7) + 2.0))
            errs[i] = abs(avg - 2.0)
        peak = np.where((errs[1:-1] >= errs[:-2]) & (errs[1:-1] >= errs[2:]))[0] + 1
        rate = -float(np.polyfit(np.log(Ls[peak]), np.log(errs[peak]), 1)[0])
        fast = rate >= q + 1.0 - 0.15  # slack for the window's subleading terms
        ok_all &= unit and nonneg and flat and fast
        details.append(f"q={q}: rate={rate:.2f}")
    _verdict(capsys, 7, "filter axioms", ok_all, ", ".join(details))


def _random_spd_field(seed):
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.2, 0.8, size=2)
    phase = rng.uniform(0.0, 1.0, size=2)
    mix = rng.uniform(-0.4, 0.4)

    def fn(y):
        d1 = 1.5 + amp[0] * np.sin(2 * np.pi * (y[..., 0] + phase[0]))
        d2 = 1.5 + amp[1] * np.cos(2 * np.pi * (y[..., 1] + phase[1]))
        c = mix * np.sqrt(d1 * d2) * np.sin(2 * np.pi * (y[..., 0] - y[..., 1]))
        out = np.empty(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = d1
        out[..., 1, 1] = d2
        out[..., 0, 1] = c
        out[..., 1, 0] = c
        return out

    fld = ch.TensorField(dim=2, fn=fn, alpha=0.1, beta=4.0, name=f"rand-{seed}")
    lo, hi = ch.estimate_bounds(fld, samples_per_axis=32)
    assert lo > 0.0, "draw produced a non-SPD field"
    return fld


def test_criterion_8_invariants(capsys):
    """Constant identity for all four routes, energy decay on random SPD
    fields, symmetric outputs, and bitwise-deterministic repeats."""
    c = 2.75
    fld = ch.constant_field(c, dim=2)
    ident = {}
    ident["periodic"] = ch.solve_periodic_reference(fld, h=1.0 / 8.0).values
    ident["elliptic"] = ch.solve_elliptic_dirichlet(fld, R=2.5, h=1.0 / 8.0).values
    params = ch.optimal_params("parabolic", 2.5, q=1, k_o=0.5, alpha=c, beta=c)
    traj = ch.evolve_parabolic(fld, 2.5, 1.0 / 8.0, params.T,
                               filters=[BoxFilter(base=make_filter(1), L=params.L, dim=2)])
    ident["parabolic"] = ch.upscale_parabolic(fld, params, traj).values
    mparams = ch.optimal_params("modified-elliptic", 2.5, q=1, k_o=0.5,
                                alpha=c, beta=c, N_rule=12)
    ident["modified-elliptic"] = ch.solve_modified_elliptic(fld, mparams, h=1.0 / 8.0).values
    id_errs = {k: float(np.abs(v - c * np.eye(2)).max()) for k, v in ident.items()}
    identity_ok = all(e <= 1e-10 for e in id_errs.values())

    # parabolic energy monotonicity across 20 random SPD coefficient fields
    energy_ok = True
    for seed in range(20):
        f = _random_spd_field(seed)
        t = ch.evolve_parabolic(f, 2.0, 1.0 / 10.0, 0.3,
                                filters=[BoxFilter(base=make_filter(1), L=1.0, dim=2)],
                                control=StepControl(rtol=1e-4))
        e = np.asarray(t.energies)
        energy_ok &= bool(np.all(np.diff(e, axis=0) <= 1e-10 * e[:-1] + 1e-300))

    # symmetry of the energy-form output; bitwise determinism of a repeat
    out1 = ch.solve_elliptic_dirichlet(_benchmark(), R=2.5, h=1.0 / 16.0)
    out2 = ch.solve_elliptic_dirichlet(_benchmark(), R=2.5, h=1.0 / 16.0)
    sym_ok = np.array_equal(out1.values, out1.values.T)
    det_ok = np.array_equal(out1.values, out2.values)
    p = ch.optimal_params("modified-elliptic", 2.5, q=1, k_o=0.5,
                          alpha=_benchmark().alpha, beta=_benchmark().beta, N_rule=20)
    m1 = ch.solve_modified_elliptic(_benchmark(), p, h=1.0 / 16.0, seed=42)
    m2 = ch.solve_modified_elliptic(_benchmark(), p, h=1.0 / 16.0, seed=42)
    det_ok &= np.array_equal(m1.values, m2.values)

    ok = identity_ok and energy_ok and sym_ok and det_ok
    _verdict(capsys, 8, "invariant suite", ok,
             f"constant-identity max err={max(id_errs.values()):.1e} (<= 1e-10), "
             f"energy monotone={energy_ok}, symmetric={sym_ok}, deterministic={det_ok}")
