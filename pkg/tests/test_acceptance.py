"""Acceptance criteria 1-8 at their stated tolerances.

Each test records one PASS/FAIL line, echoed live and repeated in the terminal
summary. Trained restarts are cached under ``.ckn_cache/`` (keyed by run config and
source digest); set ``CKN_CACHE=off`` to force fresh training.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from ckn import cli, dataio, experiments, koopman, modal, synth
from ckn.dataio import MaskParams
from ckn.net import CKN, EncoderConfig
from ckn.train import compute_loss

from .conftest import record

_cache = os.environ.get("CKN_CACHE", str(Path(__file__).resolve().parents[1] / ".ckn_cache"))
CACHE = None if _cache.lower() in ("off", "0", "none", "") else _cache

WAVES_TRUTH = [2.00, 5.71, 5.00]
PARTICLE_TRUTH = [5.89, 7.84, 3.92]
STRING_TRUTH = [1.78, 2.67]


@pytest.fixture(scope="session")
def waves_run():
    return experiments.run_system(cli.profile("waves"), CACHE)


@pytest.fixture(scope="session")
def particles_run():
    return experiments.run_system(cli.profile("particles"), CACHE)


@pytest.fixture(scope="session")
def particles_unmasked_run():
    cfg = cli.profile("particles", training={"mask": vars(MaskParams.disabled())})
    return experiments.run_system(cfg, CACHE)


@pytest.fixture(scope="session")
def string_run():
    return experiments.run_system(cli.profile("string"), CACHE)


@pytest.fixture(scope="session")
def pendulum_run():
    return experiments.run_system(cli.profile("pendulum"), CACHE)


def _fmt(xs):
    return "(" + ", ".join(f"{x:.3f}" for x in xs) + ")"


# ---------------------------------------------------------------- 1, 2, 3


@pytest.mark.slow
def test_criterion_1_linear_waves(waves_run):
    reports, sel = experiments.mode_table(waves_run)
    found = experiments.selected_frequencies(reports, sel)
    errs = experiments.frequency_errors(found, WAVES_TRUTH)
    ok = len(sel) == 3 and max(errs) <= 0.20
    matched = modal.match_frequencies(found, WAVES_TRUTH)
    record(1, ok, f"waves selected {_fmt(matched)} vs {_fmt(WAVES_TRUTH)} Hz, max error {max(errs):.3f} (tol 0.20)")
    assert ok


@pytest.mark.slow
def test_criterion_2_particles(particles_run):
    reports, sel = experiments.mode_table(particles_run)
    found = experiments.selected_frequencies(reports, sel)
    errs = experiments.frequency_errors(found, PARTICLE_TRUTH)
    matched = modal.match_frequencies(found, PARTICLE_TRUTH)
    ratio = matched[1] / matched[2] if len(sel) == 3 else math.nan
    ok = len(sel) == 3 and max(errs) <= 0.60 and 1.85 <= ratio <= 2.15
    record(
        2, ok,
        f"particles selected {_fmt(matched)} vs {_fmt(PARTICLE_TRUTH)} Hz, max error {max(errs):.3f} "
        f"(tol 0.60), f2/f3 = {ratio:.3f} (need 1.85-2.15)",
    )
    assert ok


@pytest.mark.slow
def test_criterion_3_string(string_run):
    assert string_run.cfg.stack == 3
    reports, sel = experiments.mode_table(string_run)
    found = experiments.selected_frequencies(reports, sel)
    errs = experiments.frequency_errors(found, STRING_TRUTH)
    matched = modal.match_frequencies(found, STRING_TRUTH)
    ok = len(sel) == 2 and max(errs) <= 0.10
    record(3, ok, f"string (stack 3) selected {_fmt(matched)} vs {_fmt(STRING_TRUTH)} Hz, "
                  f"max error {max(errs):.3f} (tol 0.10)")
    assert ok


# ---------------------------------------------------------------------- 4


@pytest.mark.slow
def test_criterion_4_masking_ablation(particles_run, particles_unmasked_run):
    counts = []
    for masked, plain in zip(particles_run.models, particles_unmasked_run.models):
        n_m = len(experiments.mode_table(particles_run, masked)[1]) if masked is not None else 0
        n_u = len(experiments.mode_table(particles_unmasked_run, plain)[1]) if plain is not None else 0
        counts.append((n_m, n_u))
    wins = sum(n_u < n_m for n_m, n_u in counts)
    ok = wins >= 2
    detail = ", ".join(f"seed {i}: masked {m} / unmasked {u}" for i, (m, u) in enumerate(counts))
    record(4, ok, f"distinct modes {detail}; unmasked strictly fewer in {wins}/3 (need 2)")
    assert ok


# ---------------------------------------------------------------------- 5


def isolates(freqs, truth, tol):
    """Both target frequencies among the two most energetic oscillatory modes."""
    top = [f for f, _ in freqs[: len(truth)]]
    errs = experiments.frequency_errors(top, truth)
    return len(top) == len(truth) and max(errs) <= tol


def test_criterion_5_dmd_contrast():
    string = synth.generate("string", 2000)
    string_hits = {r: isolates(modal.dmd_oscillatory(modal.dmd(string, r)), STRING_TRUTH, 0.10) for r in range(1, 7)}
    waves = synth.generate("waves", 2000)
    wave_freqs = [f for f, _ in modal.dmd_oscillatory(modal.dmd(waves, 6))]
    wave_errs = experiments.frequency_errors(wave_freqs[:3], WAVES_TRUTH)
    ok = not any(string_hits.values()) and max(wave_errs) <= 0.05
    record(
        5, ok,
        f"string DMD isolates 1.78/2.67 Hz at ranks {[r for r, h in string_hits.items() if h] or 'none'} of 1-6; "
        f"wave DMD rank 6 max error {max(wave_errs):.2e} Hz (tol 0.05)",
    )
    assert ok


# ---------------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_pendulum(pendulum_run):
    cfg = pendulum_run.cfg
    drift = []
    for a in cfg.angles:
        spec = synth.default_pendulum_spec(a, cfg.frame_size[0])
        e = synth.pendulum_energy(synth.integrate_pendulum(spec, cfg.n_frames, cfg.dt), spec.natural_frequency_sq)
        drift.append(float(np.max(np.abs(e - e[0])) / abs(e[0])))
    rows = experiments.pendulum_scores(pendulum_run)
    # errors pooled over the whole amplitude sweep
    ckn = float(np.mean([r["ckn_mse"] for r in rows]))
    base = float(np.mean([r["persistence_mse"] for r in rows]))
    per = ", ".join(f"{r['initial_angle']:.1f} rad {r['persistence_mse'] / r['ckn_mse']:.2f}x" for r in rows)
    ok = base / ckn >= 2.0 and max(drift) <= 1e-6
    record(
        6, ok,
        f"pendulum single-mode (pair {rows[0]['mode']}) 5-step MSE {ckn:.3g} vs persistence {base:.3g}: "
        f"{base / ckn:.2f}x (need 2x) [{per}]; max energy drift {max(drift):.1e} (tol 1e-6)",
    )
    assert ok


# ---------------------------------------------------------------------- 7


def complex_advance(y, pairs, dt):
    z = (y[0::2] + 1j * y[1::2]) * np.exp((pairs[:, 0] + 1j * pairs[:, 1]) * dt)
    out = np.empty_like(y)
    out[0::2], out[1::2] = z.real, z.imag
    return out


def test_criterion_7_numerical_kernels():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checks = {}

    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(1, 9))
        y = rng.normal(size=2 * m) * 3
        pairs = np.stack([rng.uniform(-3, 3, m), rng.uniform(-80, 80, m)], 1)
        got = koopman.advance(torch.from_numpy(y), torch.from_numpy(pairs), 0.01).numpy()
        want = complex_advance(y, pairs, 0.01)
        worst = max(worst, float(np.max(np.abs(got - want)) / (1 + np.abs(want).max())))
    checks["advance vs complex oracle 1e-12"] = worst <= 1e-12

    worst = 0.0
    for _ in range(100):
        y = torch.from_numpy(rng.normal(size=8))
        pairs = torch.from_numpy(np.stack([rng.uniform(-2, 2, 4), rng.uniform(-60, 60, 4)], 1))
        a, b = rng.uniform(1e-3, 0.05, 2)
        lhs = koopman.advance(koopman.advance(y, pairs, a), pairs, b)
        rhs = koopman.advance(y, pairs, a + b)
        worst = max(worst, float((lhs - rhs).abs().max() / (1 + rhs.abs().max())))
    checks["semigroup 1e-10"] = worst <= 1e-10

    checks["loss/advance gradients vs central differences 1e-4"] = _gradient_checks()

    y = torch.randn(16, 2 * 8, dtype=torch.float64)
    total = sum(koopman.null_modes(y, {i}) for i in range(8))
    checks["sum of single-mode null embeddings exact"] = bool(torch.equal(total, y))

    x = np.ones((64, 64, 1))
    fracs = [np.mean(dataio.apply_masks(x, MaskParams(), np.random.default_rng(s)) == 0) for s in range(300)]
    # two squares of side >= 6 px up to three of side <= 19 px (possibly overlapping)
    bounds = min(fracs) >= 36 / 4096 - 1e-12 and max(fracs) <= 3 * 19**2 / 4096
    same = all(
        np.array_equal(dataio.apply_masks(x, MaskParams(), s), dataio.apply_masks(x, MaskParams(), s)) for s in range(20)
    )
    checks["mask fraction bounds and determinism"] = bounds and same

    clip = synth.generate("particles", 200)
    centred, mean = dataio.subtract_mean(clip)
    checks["mean-subtract round trip 1e-6"] = float(np.abs(dataio.add_mean(centred, mean).frames - clip.frames).max()) <= 1e-6

    elapsed = time.perf_counter() - t0
    checks["under 60 s"] = elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    record(7, ok, f"{len(checks) - len(failed)}/{len(checks)} kernel checks in {elapsed:.1f} s"
                  + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed


def _central_difference(f, p, idx, h=1e-6):
    with torch.no_grad():
        orig = p[idx].item()
        p[idx] = orig + h
        up = f()
        p[idx] = orig - h
        down = f()
        p[idx] = orig
    return (up - down) / (2 * h)


def _gradient_checks() -> bool:
    ok = True
    # advance with respect to the eigenvalues
    y = torch.randn(6, dtype=torch.float64)
    pairs = torch.tensor([[0.2, 5.0], [-0.4, 12.0], [0.0, 30.0]], dtype=torch.float64, requires_grad=True)
    w = torch.randn(6, dtype=torch.float64)
    (g,) = torch.autograd.grad((w * koopman.advance(y, pairs, 0.01)).sum(), pairs)
    p = pairs.detach().clone()
    for i in range(3):
        for j in range(2):
            fd = _central_difference(lambda: float((w * koopman.advance(y, p, 0.01)).sum()), p, (i, j))
            ok &= abs(g[i, j].item() - fd) <= 1e-4 * abs(fd) + 1e-8
    # full loss with respect to network weights, both auxiliary variants
    for aux in ("global", "radial"):
        torch.manual_seed(0)
        cfg = EncoderConfig(conv_filters=(2, 2, 2), dense_widths=(4,), height=8, width=8, n_pairs=1,
                            dropout_rate=0.0, aux_widths=(3,), aux_init_gain=1.0, aux_mode=aux)
        model = CKN(cfg).double().train()
        x = torch.randn(4, 4, 8, 8, 1, dtype=torch.float64)
        masked = x[:, 0].clone()
        masked[:, 2:5, 1:4] = 0
        params = dict(model.named_parameters())
        grads = dict(zip(params, torch.autograd.grad(compute_loss(model, masked, x, 0.01).total, list(params.values()))))
        rng = np.random.default_rng(1)
        for _ in range(10):
            name = list(params)[rng.integers(len(params))]
            idx = tuple(int(rng.integers(s)) for s in params[name].shape)
            fd = _central_difference(lambda: compute_loss(model, masked, x, 0.01).total.item(), params[name], idx)
            ok &= abs(grads[name][idx].item() - fd) <= 1e-4 * abs(fd) + 1e-8
    return bool(ok)


# ---------------------------------------------------------------------- 8


@pytest.mark.slow
def test_criterion_8_reproducibility():
    cfg = cli.profile(
        "waves", n_frames=300, seed=11,
        training={"epochs": 3, "restarts": 2, "snippets_per_epoch": 128},
    )
    tables = []
    for _ in range(2):
        run = experiments.run_system(cfg, cache_dir=None)
        tables.append(experiments.mode_table(run))
    ok = tables[0] == tables[1]
    record(8, ok, "two fresh runs of one RunConfig + seed give " + ("identical" if ok else "different") + " mode tables")
    assert ok
