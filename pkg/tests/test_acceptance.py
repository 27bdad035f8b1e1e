"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from freqdrop.data import corruption_grid
from freqdrop.fd_layer import FAMILIES, FDConfig, FDMode, build_draw, cbs_draw, choose_filter, fd_backward, fd_forward
from freqdrop.harness.compare import ALL, summary_from_csv
from freqdrop.harness.config import DataConfig, Method, TrainConfig
from freqdrop.harness.experiment import run_experiment
from freqdrop.harness.metrics import HEADER, read_records
from freqdrop.harness.train import train
from freqdrop.kernels import FilterFamily, dtft_magnitude, gabor_kernel, gaussian_kernel, log_kernel
from freqdrop.layers import (
    ConvLayer,
    DenseLayer,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    softmax_xent,
)
from freqdrop.network import encode_checkpoint, forward, forward_backward, input_gradient, tiny_net
from freqdrop.rng import Domain, RngStream

from oracles import conv2d_loop, depthwise_loop, numeric_grad, rel_error

GRID = [(s, k) for s in (0.5, 1.0, 2.0) for k in (3, 5, 7)]


def fd_rng(seed, step=0, layer=0):
    return RngStream.for_(seed, Domain.FD, layer=layer, step=step)


# -- kernel analytics -------------------------------------------------------------------


def test_kernel_analytics(criterion):
    start = time.perf_counter()
    problems = []
    for s, k in GRID:
        g = gaussian_kernel(s, k).values
        if abs(g.sum() - 1.0) > 1e-9:
            problems.append(f"gaussian({s},{k}) sum {g.sum()!r}")
        if max(np.abs(g - g.T).max(), np.abs(g - g[::-1]).max(), np.abs(g - g[:, ::-1]).max()) > 1e-12:
            problems.append(f"gaussian({s},{k}) asymmetric")
        lg = log_kernel(s, k, zero_dc=True).values
        if abs(lg.sum()) > 1e-12:
            problems.append(f"log({s},{k}) sum {lg.sum():.3g}")
        mags = [dtft_magnitude(gaussian_kernel(s, k), u, 0.0) for u in np.linspace(0, math.pi, 8)]
        if any(b > a + 1e-15 for a, b in zip(mags, mags[1:])):
            problems.append(f"gaussian({s},{k}) DTFT not monotone ({mags[0]:.3f}..{min(mags):.3f}..{mags[-1]:.3f})")
    for lam in (3.0, 4.0, 6.0):
        gb = gabor_kernel(2.0, lam, 0.0, 1.0, 0.0, 9)
        peak = dtft_magnitude(gb, 2 * math.pi / lam, 0.0)
        if not (peak > dtft_magnitude(gb, 0.0, 0.0) and peak > dtft_magnitude(gb, math.pi, 0.0)):
            problems.append(f"gabor(lambda={lam}) not band-pass")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 1.0
    detail = f"{len(problems)} violation(s) in {elapsed:.3f}s" + (": " + "; ".join(problems) if problems else "")
    criterion("Kernel analytics", ok, detail)


# -- oracle equivalence -----------------------------------------------------------------


def test_oracle_equivalence(criterion):
    start = time.perf_counter()
    g = np.random.default_rng(2024)
    worst_fd = worst_conv = 0.0
    for i in range(50):
        n, c = int(g.integers(1, 3)), int(g.integers(1, 5))
        h, w = int(g.integers(5, 9)), int(g.integers(5, 9))
        k = int(g.choice([1, 3, 5]))
        x = g.normal(size=(n, c, h, w))
        cfg = FDConfig(kernel_size=k, p_gauss=0.3, p_log=0.3, p_gabor=0.3)
        d = build_draw(c, cfg, fd_rng(i))
        worst_fd = max(worst_fd, np.abs(fd_forward(x, d) - depthwise_loop(x, d.full_stack(), d.active_mask)).max())
        o, stride, pad = int(g.integers(1, 5)), int(g.integers(1, 3)), int(g.integers(0, 3))
        layer = ConvLayer(g.normal(size=(o, c, k, k)), g.normal(size=o), stride, pad)
        ref = conv2d_loop(x, layer.weights, layer.bias, stride, pad)
        worst_conv = max(worst_conv, np.abs(conv2d_forward(x, layer) - ref).max())
    elapsed = time.perf_counter() - start
    ok = worst_fd <= 1e-12 and worst_conv <= 1e-12 and elapsed < 5.0
    criterion("Oracle equivalence", ok, f"max |fd - oracle| {worst_fd:.2e}, max |conv - oracle| {worst_conv:.2e}, "
                                        f"50 instances in {elapsed:.2f}s")


# -- gradient suite ---------------------------------------------------------------------


def _per_op_errors(g):
    errs = {}
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        layer = ConvLayer(g.normal(size=(3, 2, 3, 3)), g.normal(size=3), stride, pad)
        x = g.normal(size=(2, 2, 6, 5))
        w = g.normal(size=conv2d_forward(x, layer).shape)
        f = lambda: float(np.sum(conv2d_forward(x, layer) * w))
        gx, gw, gb = conv2d_backward(w, x, layer)
        errs[f"conv s{stride}p{pad}"] = max(rel_error(gx, numeric_grad(f, x)),
                                           rel_error(gw, numeric_grad(f, layer.weights)),
                                           rel_error(gb, numeric_grad(f, layer.bias)))
    x = g.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    w = g.normal(size=x.shape)
    errs["relu"] = rel_error(relu_backward(w, x), numeric_grad(lambda: float(np.sum(relu_forward(x) * w)), x))
    x = g.normal(size=(2, 3, 5, 7))
    w = g.normal(size=(2, 3, 2, 3))
    _, arg = maxpool2_forward(x)
    errs["maxpool"] = rel_error(maxpool2_backward(w, arg, x.shape),
                                numeric_grad(lambda: float(np.sum(maxpool2_forward(x)[0] * w)), x))
    layer = DenseLayer(g.normal(size=(6, 3)), g.normal(size=3))
    x, w = g.normal(size=(4, 6)), g.normal(size=(4, 3))
    f = lambda: float(np.sum(dense_forward(x, layer) * w))
    gx, gw, gb = dense_backward(w, x, layer)
    errs["dense"] = max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, layer.weights)),
                        rel_error(gb, numeric_grad(f, layer.bias)))
    z, y = g.normal(size=(5, 4)), g.integers(0, 4, size=5)
    errs["softmax_xent"] = rel_error(softmax_xent(z, y)[1], numeric_grad(lambda: softmax_xent(z, y)[0], z))
    seen = {}
    cfg = FDConfig(p_gauss=0.3, p_log=0.3, p_gabor=0.3)
    for step in range(200):
        d = build_draw(3, cfg, fd_rng(7, step))
        if d.active_mask.any():
            seen.setdefault(d.family, d)
        if len(seen) == len(FAMILIES):
            break
    for family, d in seen.items():
        x, w = g.normal(size=(2, 3, 5, 5)), g.normal(size=(2, 3, 5, 5))
        num = numeric_grad(lambda: float(np.sum(fd_forward(x, d) * w)), x)
        errs[f"fd {family.value}"] = rel_error(fd_backward(w, d), num)
    return errs


def _end_to_end_errors(g):
    errs = {}
    families = set()
    cases = [(FDMode.FD_RF, s) for s in range(4)] + [(FDMode.FD_GF, 0), (FDMode.CBS, 0), (FDMode.OFF, 0)]
    for mode, seed in cases:
        net = tiny_net(3, (1, 8, 8), np.random.default_rng(seed), with_fd=mode != FDMode.OFF, widths=(2, 3))
        x, y = g.normal(size=(4, 1, 8, 8)), g.integers(0, 3, size=4)
        if mode == FDMode.OFF:
            draws = None
        elif mode == FDMode.CBS:
            draws = [cbs_draw(lyr.channels, 1.0, FDConfig(mode=mode)) for lyr in net.fd_layers]
        else:
            cfg = FDConfig(mode=mode, p_gauss=0.5, p_log=0.5, p_gabor=0.5)
            draws = [build_draw(lyr.channels, cfg, fd_rng(seed, layer=i)) for i, lyr in enumerate(net.fd_layers)]
            families.update(d.family for d in draws)
        _, grads, _ = forward_backward(net, x, y, draws)
        f = lambda: forward_backward(net, x, y, draws)[0]
        err = max(rel_error(grads[name], numeric_grad(f, p)) for name, p in net.params().items())
        err = max(err, rel_error(input_gradient(net, x, y, draws), numeric_grad(f, x)))
        errs[f"{mode.value} seed {seed}"] = err
    return errs, families


def test_gradient_suite(criterion):
    start = time.perf_counter()
    g = np.random.default_rng(11)
    per_op = _per_op_errors(g)
    e2e, families = _end_to_end_errors(g)
    elapsed = time.perf_counter() - start
    op_worst = max(per_op, key=per_op.get)
    e2e_worst = max(e2e, key=e2e.get)
    ok = (per_op[op_worst] < 1e-6 and e2e[e2e_worst] < 1e-5 and elapsed < 30.0
          and len(per_op) == 10 and families == set(FilterFamily))
    criterion("Gradient suite", ok, f"{len(per_op)} per-op checks, worst {op_worst} {per_op[op_worst]:.2e}; "
                                    f"{len(e2e)} end-to-end checks, worst {e2e_worst} {e2e[e2e_worst]:.2e}; "
                                    f"{elapsed:.1f}s")


# -- identity / determinism ---------------------------------------------------------------


def _tiny_train_config(method, seed):
    data = DataConfig(n_train=48, n_val=0, n_test=8)
    return TrainConfig(method=method, seed=seed, epochs=2, batch_size=16, data=data).validate()


def test_identity_and_determinism(criterion):
    g = np.random.default_rng(3)
    x = g.normal(size=(2, 16, 9, 9))
    off = FDConfig(p_gauss=1.0, p_log=1.0, p_gabor=1.0)
    full_dropout = all(fd_forward(x, build_draw(16, replace(off, mode=mode), fd_rng(0, s))).tobytes() == x.tobytes()
                       for mode in (FDMode.FD_RF, FDMode.FD_GF) for s in range(20))

    net = tiny_net(2, (1, 12, 12), np.random.default_rng(0), widths=(4, 6))
    imgs = g.normal(size=(3, 1, 12, 12))
    mode_off = forward(net, imgs, draws=[None, None])[0].tobytes() == forward(net.without_fd(), imgs)[0].tobytes()

    same_seed = True
    for method in Method:
        a = encode_checkpoint(train(_tiny_train_config(method, 5)).checkpoint)
        b = encode_checkpoint(train(_tiny_train_config(method, 5)).checkpoint)
        same_seed &= a == b

    freqs = []
    for seed in (0, 1, 2):
        r = RngStream.for_(seed, Domain.FD)
        counts = {f: 0 for f in FAMILIES}
        for _ in range(30000):
            counts[choose_filter(r)] += 1
        freqs.extend(counts[f] / 30000 for f in FAMILIES)
    freq_ok = all(0.323 <= f <= 0.343 for f in freqs)

    ok = full_dropout and mode_off and same_seed and freq_ok
    criterion("Identity/determinism", ok, f"full-dropout identity {full_dropout}, mode-off equals FD-free {mode_off}, "
                                          f"same-seed checkpoints identical {same_seed}, "
                                          f"filter frequencies in [{min(freqs):.4f}, {max(freqs):.4f}]")


# -- desk-scale experiments -----------------------------------------------------------------


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    cpu = time.process_time()
    res = run_experiment(TrainConfig(), tmp_path_factory.mktemp("experiment"), seeds=(0, 1))
    res.cpu_seconds = time.process_time() - cpu
    return res


@pytest.mark.slow
def test_shortcut_experiment(experiment, criterion):
    res = experiment
    correlated = {m.value: res.mean("correlated", m.value) for m in Method}
    decor = {m.value: res.mean("decorrelated", m.value) for m in Method}
    margin = decor["fd_rf"] - decor["baseline"]
    all_correlated = all(v >= 0.97 for v in correlated.values())
    fast = res.train_seconds < 600
    table = ", ".join(f"{m} {correlated[m]:.4f}/{decor[m]:.4f}" for m in correlated)
    ok = all_correlated and margin >= 0.02 and fast
    criterion("Shortcut experiment", ok, f"correlated/decorrelated {table}; FD_RF - Baseline {100 * margin:+.2f}pp "
                                         f"(need >= +2pp); training {res.train_seconds:.0f}s wall, "
                                         f"{res.cpu_seconds:.0f}s CPU for the whole experiment")


@pytest.mark.slow
def test_robustness_experiment(experiment, criterion):
    res = experiment
    fd_rf, base = res.mean("corrupted", "fd_rf"), res.mean("corrupted", "baseline")
    rows = summary_from_csv((res.out_dir / "comparison.csv").read_text())
    kinds = {spec.kind.value for spec in corruption_grid()}
    cells = {(r.method, r.corruption, r.severity) for r in rows if r.phase == "corrupt"}
    complete = all((m.value, k, s) in cells for m in Method for k in kinds for s in map(str, range(1, 6)))
    per_severity = all((m.value, ALL, s) in cells for m in Method for s in map(str, range(1, 6)))
    fast = res.robustness_seconds < 60
    ok = fd_rf >= base and complete and per_severity and fast
    criterion("Robustness experiment", ok, f"mean corrupted accuracy FD_RF {fd_rf:.4f} vs Baseline {base:.4f}; "
                                           f"per-severity CSV complete {complete and per_severity}; "
                                           f"evaluation {res.robustness_seconds:.1f}s")


# -- CLI contract ---------------------------------------------------------------------------


def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "freqdrop.harness.cli", *map(str, args)],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout + proc.stderr


def test_cli_contract(tmp_path, criterion):
    failures = []

    def run(*args):
        code, out = _cli(*args)
        if code != 0:
            failures.append(f"{args[0]} exited {code}: {out.strip()[-200:]}")
        return out

    train_data, test_data = tmp_path / "train.fdds", tmp_path / "test.fdds"
    run("gen-data", "--out", train_data, "--split", "train", "--n", 64)
    run("gen-data", "--out", test_data, "--split", "test", "--n", 40)
    run("corrupt", "--in", test_data, "--kind", "blur", "--severity", 3, "--out", tmp_path / "blur.fdds")
    run("kernel-dump", "--family", "gabor", "--sigma", 1, "--size", 3, "--lambda", 4, "--out", tmp_path / "k.txt")
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(f"[train]\nepochs = 2\nbatch_size = 16\n[data]\ntrain_path = {train_data}\nn_val = 16\n")
    runs = tmp_path / "runs"
    csvs = []
    for method in Method:
        for seed in (0, 1):
            run("train", "--config", cfg, "--method", method.value, "--seed", seed, "--out", runs)
            name = f"{method.value}_s{seed}"
            csvs.append(runs / name / "metrics.csv")
            csvs.append(runs / name / "eval.csv")
            run("eval", "--ckpt", runs / name / "checkpoint.fdnn", "--data", test_data, "--grid", "all",
                "--out", csvs[-1])
    run("compare", "--runs", runs, "--out", tmp_path / "comparison.csv")
    run("experiment", "--out", tmp_path / "exp", "--config", cfg, "--epochs", 1, "--n-test", 20, "--methods",
        "baseline,fd_rf", "--seeds", "0,1")

    schema_ok = True
    try:
        for path in csvs + [tmp_path / "exp" / "baseline_s0" / "eval.csv"]:
            schema_ok &= path.read_text().splitlines()[0] == ",".join(HEADER) and len(read_records(path)) > 0
        schema_ok &= len(read_records(runs / "fd_rf_s1" / "eval.csv")) == 1 + len(corruption_grid())
        for path in (tmp_path / "comparison.csv", tmp_path / "exp" / "comparison.csv"):
            schema_ok &= len(summary_from_csv(path.read_text())) > 0
    except Exception as e:  # a missing or malformed file is a contract failure, reported below
        failures.append(f"schema: {e}")
        schema_ok = False
    ok = not failures and schema_ok
    criterion("CLI contract", ok, f"{len(csvs)} run CSVs and 2 comparison CSVs schema-valid {schema_ok}; "
                                  + ("all subcommands exited 0" if not failures else "; ".join(failures)))
