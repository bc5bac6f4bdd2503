"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

Run on its own with ``pytest tests/test_acceptance.py -v``; the criterion
lines are repeated in the terminal summary.  The two trained toy networks
are built once per module (about two minutes on one core).
"""
import math
import time

import numpy as np
import pytest

from face_manifold._rng import derive_rng
from face_manifold.autoencoder import backward, build, forward
from face_manifold.cli import main
from face_manifold.dataset import (
    CorruptionConfig,
    build_dataset,
    corrupt,
    normalize_shape,
    split,
    unique_clean,
)
from face_manifold.evaluator import (
    covariance_trace,
    default_sigma_grid,
    diversity_report,
    generate_synthetic,
    noise_sweep,
    pca_fit_2d,
    pca_project_2d,
    quadratic_fit_r2,
)
from face_manifold.morphable_model import Group, make_toy_model, sample_normal_batch
from face_manifold.tensor_nn import (
    ConvKernel,
    conv1d_backward,
    conv1d_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    maxunpool1d_backward,
    maxunpool1d_forward,
    relu_backward,
    relu_forward,
    tconv1d_backward,
    tconv1d_forward,
)
from face_manifold.trainer import TrainConfig, evaluate_mse, train

from fdcheck import activation_pattern, numeric_grad, random_weights, rel_error
from oracles import conv_matrix, direct_conv1d

SEED = 0
INSTANCES = 100


# --- shared toy runs -------------------------------------------------------------

def toy_run(group, sigma, copies):
    start = time.perf_counter()
    model = make_toy_model()
    clean = sample_normal_batch(model, group, 400, derive_rng(SEED, "clean"))
    ds = build_dataset(clean, CorruptionConfig(sigma, copies, SEED), group)
    if Group.parse(group) is Group.IDENTITY:
        ds = normalize_shape(ds)
    train_set, test_set = split(ds, 0.1, SEED)
    weights, history = train(build(ds.param_count), train_set, test_set, TrainConfig(seed=SEED))
    out_mse, in_mse = evaluate_mse(weights, test_set)
    return {
        "model": model, "weights": weights, "history": history, "test": test_set,
        "sigma": sigma, "out_mse": out_mse, "in_mse": in_mse,
        "seconds": time.perf_counter() - start,
    }


@pytest.fixture(scope="module")
def expression_run():
    return toy_run("expression", 2.0, 50)


@pytest.fixture(scope="module")
def shape_run():
    return toy_run("identity", 5e5, 20)


# --- criterion 1: gradients ---------------------------------------------------------

def _linear_probe(rng, shape):
    return rng.normal(size=shape)


def _kernel_instance(rng, transposed):
    i, o, length = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 17)
    w = rng.normal(size=(o, i, 3))
    b = rng.normal(size=i if transposed else o)
    x = rng.normal(size=(o if transposed else i, length))
    return x, ConvKernel(w, b, transposed=transposed)


def _check_conv(rng, transposed):
    fwd, bwd = (tconv1d_forward, tconv1d_backward) if transposed else (conv1d_forward, conv1d_backward)
    x, k = _kernel_instance(rng, transposed)
    r = _linear_probe(rng, fwd(x, k).shape)
    gx, gw, gb = bwd(x, k, r)
    f = lambda: float(np.sum(fwd(x, k) * r))
    return max(rel_error(gx, numeric_grad(f, x)),
               rel_error(gw, numeric_grad(f, k.weights)),
               rel_error(gb, numeric_grad(f, k.bias)))


def _tie_free(rng, channels, length, gap=1e-3):
    while True:
        x = rng.normal(size=(channels, length))
        n = length // 2
        if np.all(np.abs(x[:, 0:2 * n:2] - x[:, 1:2 * n:2]) > gap):
            return x


def _check_pool(rng):
    x = _tie_free(rng, rng.integers(1, 5), rng.integers(2, 17))
    out, rec = maxpool1d_forward(x)
    r = _linear_probe(rng, out.shape)
    f = lambda: float(np.sum(maxpool1d_forward(x)[0] * r))
    return rel_error(maxpool1d_backward(rec, r), numeric_grad(f, x))


def _check_unpool(rng):
    _, rec = maxpool1d_forward(_tie_free(rng, rng.integers(1, 5), rng.integers(2, 17)))
    x = rng.normal(size=rec.indices.shape)
    r = _linear_probe(rng, (x.shape[0], rec.pre_length))
    f = lambda: float(np.sum(maxunpool1d_forward(x, rec) * r))
    return rel_error(maxunpool1d_backward(rec, r), numeric_grad(f, x))


def _check_relu(rng):
    x = rng.normal(size=(rng.integers(1, 5), rng.integers(1, 17)))
    # keep away from the kink
    x = np.where(np.abs(x) < 1e-3, 1e-3 * np.sign(x + 1e-300), x)
    r = _linear_probe(rng, x.shape)
    f = lambda: float(np.sum(relu_forward(x) * r))
    return rel_error(relu_backward(x, r), numeric_grad(f, x))


def _check_network(rng, coords=40):
    w = random_weights(build(16), rng)
    x = rng.normal(size=16)
    r = rng.normal(size=16)
    params = [p.copy() for p in w.parameters()]
    _, trace = forward(w, x)
    analytic = np.concatenate([g.reshape(-1) for g in backward(w, trace, r)])
    base = activation_pattern(trace)
    sizes = np.cumsum([0] + [p.size for p in params])

    def probe():
        out, t = forward(w.with_parameters(params), x)
        return float(out @ r), np.array_equal(activation_pattern(t), base)

    worst = 0.0
    num = np.zeros_like(analytic)
    keep = []
    for flat_idx in rng.choice(analytic.size, coords, replace=False):
        layer = np.searchsorted(sizes, flat_idx, side="right") - 1
        flat = params[layer].reshape(-1)
        j = flat_idx - sizes[layer]
        old = flat[j]
        flat[j] = old + 1e-6
        fp, ok_p = probe()
        flat[j] = old - 1e-6
        fm, ok_m = probe()
        flat[j] = old
        num[flat_idx] = (fp - fm) / 2e-6
        if ok_p and ok_m:
            keep.append(flat_idx)
    worst = rel_error(analytic, num, keep) if keep else 0.0
    # directional derivative along a random direction touches every weight at once
    d = rng.normal(size=analytic.size)
    base_params = [p.copy() for p in params]

    def shifted(step):
        for p, p0, lo, hi in zip(params, base_params, sizes[:-1], sizes[1:]):
            p[...] = p0 + step * d[lo:hi].reshape(p.shape)
        return probe()

    (fp, ok_p), (fm, ok_m) = shifted(1e-6), shifted(-1e-6)
    shifted(0.0)
    if ok_p and ok_m:
        dd = (fp - fm) / 2e-6
        worst = max(worst, abs(dd - analytic @ d) / max(abs(dd), abs(analytic @ d), 1e-12))
    return worst


def test_criterion_1_gradients(criterion):
    start = time.perf_counter()
    checks = {
        "conv1d": lambda rng: _check_conv(rng, False),
        "tconv1d": lambda rng: _check_conv(rng, True),
        "maxpool": _check_pool,
        "maxunpool": _check_unpool,
        "relu": _check_relu,
        "network": _check_network,
    }
    worst = {}
    for name, check in checks.items():
        worst[name] = max(check(derive_rng(SEED, "fd-" + name, i)) for i in range(INSTANCES))
    seconds = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and seconds < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert criterion(1, ok, f"worst rel err {detail} (< 1e-5); {seconds:.1f}s (< 60s)")


# --- criterion 2: kernel oracles ---------------------------------------------------------

def test_criterion_2_kernel_oracles(criterion):
    rng = derive_rng(SEED, "oracle")
    conv_err = tconv_err = 0.0
    count = 0
    for i in range(1, 5):
        for o in range(1, 5):
            for length in range(1, 17):
                w = rng.normal(size=(o, i, 3))
                b = rng.normal(size=o)
                x = rng.normal(size=(i, length))
                conv_err = max(conv_err, np.max(np.abs(
                    conv1d_forward(x, ConvKernel(w, b)) - direct_conv1d(x, w, b))))
                y = rng.normal(size=(o, length))
                bt = rng.normal(size=i)
                dense = conv_matrix(w, length).T @ y.reshape(-1)
                got = tconv1d_forward(y, ConvKernel(w, bt, transposed=True))
                tconv_err = max(tconv_err, np.max(np.abs(
                    got - (dense.reshape(i, length) + bt[:, None]))))
                count += 1
    ok = conv_err <= 1e-12 and tconv_err <= 1e-12
    assert criterion(2, ok, f"{count} shapes, conv max err {conv_err:.1e}, "
                            f"tconv max err {tconv_err:.1e} (<= 1e-12)")


# --- criterion 3: shapes ------------------------------------------------------------------

def test_criterion_3_shapes(criterion):
    rng = derive_rng(SEED, "shapes")
    found = {}
    for length in (29, 199):
        w = random_weights(build(length), rng)
        out, trace = forward(w, rng.normal(size=length))
        found[length] = (trace.bottleneck.shape[1:], out.shape)
    ok = found[29] == ((64, 1), (29,)) and found[199] == ((64, 12), (199,))
    assert criterion(3, ok, f"L=29 bottleneck {found[29][0]} out {found[29][1]}; "
                            f"L=199 bottleneck {found[199][0]} out {found[199][1]}")


# --- criterion 4: denoising efficacy ----------------------------------------------------------

def test_criterion_4_denoising(criterion, expression_run, shape_run):
    parts, ok = [], True
    for name, run in (("expression", expression_run), ("shape", shape_run)):
        ratio = run["out_mse"] / run["in_mse"]
        ok &= ratio <= 0.2 and run["seconds"] < 600
        parts.append(f"{name} test MSE {run['in_mse']:.4g} -> {run['out_mse']:.4g} "
                     f"(ratio {ratio:.3f} <= 0.2, {run['seconds']:.0f}s)")
    assert criterion(4, ok, "; ".join(parts))


# --- criterion 5: noise robustness -----------------------------------------------------------------

def _sweep(run, group):
    clean = unique_clean(run["test"])
    if group is Group.IDENTITY:
        clean = clean * 1e5
    sigmas = default_sigma_grid(run["sigma"])
    return noise_sweep(run["weights"], clean, sigmas, copies=20, seed=SEED, group=group)


def test_criterion_5_noise_robustness(criterion, expression_run, shape_run):
    res = _sweep(expression_run, Group.EXPRESSION)
    r2 = quadratic_fit_r2(res.sigma, res.input_mse)
    # grid index 4 is sigma_train, index 6 is 2 * sigma_train
    growth = res.output_mse[6] / res.output_mse[4]
    in_growth = res.input_mse[6] / res.input_mse[4]
    ok = r2 > 0.99 and growth <= 2.0
    shape = _sweep(shape_run, Group.IDENTITY)
    info = f"shape (info): R^2 {quadratic_fit_r2(shape.sigma, shape.input_mse):.4f}, " \
           f"output growth {shape.output_mse[6] / shape.output_mse[4]:.2f}"
    assert criterion(5, ok, f"expression input R^2 {r2:.4f} (> 0.99), output_mse(2s)/output_mse(s) "
                            f"{growth:.2f} (<= 2) while input grows {in_growth:.2f}; {info}")


# --- criterion 6: diversity ---------------------------------------------------------------------------

def test_criterion_6_diversity(criterion, expression_run, shape_run):
    model = expression_run["model"]
    shape_ds, exp_ds = generate_synthetic(model, shape_run["weights"], expression_run["weights"],
                                          2000, k_shape=10, k_exp=15, seed=SEED)
    ratios = {}
    for name, ds, group in (("expression", exp_ds, Group.EXPRESSION), ("shape", shape_ds, Group.IDENTITY)):
        normal = sample_normal_batch(model, group, 2000, derive_rng(SEED, "diversity-normal"))
        rep = diversity_report({"denoised_uniform": ds.clean, "normal": normal}, sample_count=2000)
        ratios[name] = rep.ratios["denoised_uniform/normal"]
    ok = ratios["expression"] >= 3.0
    assert criterion(6, ok, f"expression trace ratio {ratios['expression']:.2f} (>= 3) over 2000 samples; "
                            f"shape (info) {ratios['shape']:.2f}")


# --- criterion 7: determinism ---------------------------------------------------------------------------

PIPELINE = [
    ["make-model", "--vertices", "162", "--p-id", "30", "--p-exp", "20", "--out", "m.fmm"],
    ["make-dataset", "--model", "m.fmm", "--group", "expression", "--sigma", "2", "--samples", "40",
     "--copies", "10", "--out-train", "et.fds", "--out-test", "ee.fds"],
    ["make-dataset", "--model", "m.fmm", "--group", "shape", "--sigma", "500000", "--samples", "40",
     "--copies", "10", "--out-train", "st.fds", "--out-test", "se.fds"],
    ["train", "--train", "et.fds", "--test", "ee.fds", "--epochs", "2", "--out", "e.fwt",
     "--metrics", "em.json", "--no-timing"],
    ["train", "--train", "st.fds", "--test", "se.fds", "--epochs", "2", "--out", "s.fwt",
     "--metrics", "sm.json", "--no-timing"],
    ["generate", "--model", "m.fmm", "--shape-weights", "s.fwt", "--exp-weights", "e.fwt",
     "--count", "100", "--out-shape", "gs.fds", "--out-exp", "ge.fds", "--export-obj", "2",
     "--obj-dir", "obj"],
    ["evaluate", "--weights", "e.fwt", "--dataset", "ee.fds", "--sigma-train", "2", "--sweep", "sweep.csv",
     "--data", "ours=ge.fds", "--data", "normal=et.fds", "--scatter", "scatter.csv",
     "--diversity", "div.json"],
    ["denoise", "--weights", "s.fwt", "--in", "se.fds", "--out", "dn.fds"],
]


def _pipeline(directory, monkeypatch, threads):
    directory.mkdir()
    monkeypatch.chdir(directory)
    for argv in PIPELINE:
        assert main(argv + ["--seed", "11", "--threads", str(threads)]) == 0, argv
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_7_determinism(criterion, tmp_path, monkeypatch, capsys):
    first = _pipeline(tmp_path / "a", monkeypatch, 1)
    again = _pipeline(tmp_path / "b", monkeypatch, 1)
    threaded = _pipeline(tmp_path / "c", monkeypatch, 4)
    capsys.readouterr()
    rerun_same = first == again
    thread_same = first == threaded
    ok = rerun_same and thread_same and len(first) == 23
    assert criterion(7, ok, f"{len(PIPELINE)} commands, {len(first)} output files: rerun identical "
                            f"{rerun_same}, 4-thread == 1-thread {thread_same}")


# --- criterion 8: statistical contracts -------------------------------------------------------------------

def test_criterion_8_statistics(criterion):
    rng = derive_rng(SEED, "stat-corrupt")
    zeros = np.zeros(29)
    mean_n = np.mean([np.count_nonzero(corrupt(zeros, 1.0, rng)) for _ in range(100_000)])
    n_err = abs(mean_n / 15.0 - 1)
    x = derive_rng(SEED, "stat-trace").normal(size=(100_000, 29))
    t_err = abs(covariance_trace(x) / 29 - 1)
    pca_err = 0.0
    for dim in range(2, 9):
        y = derive_rng(SEED, "stat-pca", dim).normal(size=(500, dim)) * 1.5 ** -np.arange(dim)
        vals = np.linalg.eigh(np.cov(y, rowvar=False))[0][::-1][:2]
        proj_var = pca_project_2d(y).var(axis=0, ddof=1)
        pca_err = max(pca_err, np.max(np.abs(proj_var / vals - 1)),
                      np.max(np.abs(pca_fit_2d(y).eigenvalues / vals - 1)))
    ok = n_err < 0.01 and t_err < 0.02 and pca_err < 1e-8
    assert criterion(8, ok, f"E[n] {mean_n:.3f} vs 15 ({n_err:.2%} < 1%); trace {t_err:.2%} off 29 (< 2%); "
                            f"PCA vs eigh rel err {pca_err:.1e} (< 1e-8)")


# --- criterion 9: training curve -----------------------------------------------------------------------------

def _mask_aware_floor(run):
    # best achievable MSE for an estimator that knows which entries were
    # corrupted: shrink each corrupted entry toward zero by s^2 / (s^2 + sigma^2)
    test = run["test"]
    s2 = run["model"].exp_scale ** 2
    v = s2 * run["sigma"] ** 2 / (s2 + run["sigma"] ** 2)
    mask = test.noisy != test.clean
    return float(np.mean(mask * v))


def test_criterion_9_training_curve(criterion, expression_run, shape_run):
    hist = expression_run["history"]
    finite = all(math.isfinite(v) for v in hist.train_loss + hist.test_loss)
    ratio = hist.test_loss[-1] / hist.test_loss[0]
    sh = shape_run["history"]
    floor = _mask_aware_floor(expression_run)
    ok = finite and ratio < 0.25
    assert criterion(9, ok, f"expression epoch-10/epoch-1 test loss {hist.test_loss[-1]:.4f}/"
                            f"{hist.test_loss[0]:.4f} = {ratio:.3f} (< 0.25), finite {finite}; "
                            f"mask-aware MSE floor {floor:.4f} vs required epoch-10 loss "
                            f"< {0.25 * hist.test_loss[0]:.4f}; shape (info) ratio "
                            f"{sh.test_loss[-1] / sh.test_loss[0]:.3f}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
