"""One test per acceptance criterion, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
a PASS/FAIL line per criterion.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predcode import archproto as ap
from predcode import dim, pcn
from predcode import free_energy as fe
from predcode import rao_ballard as rb
from predcode.cli import main
from predcode.config import load_config
from predcode.core import fd_gradient, make_rng, relative_error
from predcode.experiments import run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = range(10)

TABLE_RBP = [  # module, cs, ic, oc, count
    ("Ahat0", 1, 3, 3, 84), ("R0", 4, 15, 3, 1632), ("A1", 1, 3, 3, 84), ("Ahat1", 1, 12, 3, 327),
    ("R1", 4, 42, 12, 18192), ("A2", 1, 12, 12, 1308), ("Ahat2", 1, 24, 12, 2604), ("R2", 4, 48, 24, 41568),
]
TABLE_LOTTER = [
    ("Ahat0", 1, 3, 3, 84), ("R0", 4, 21, 3, 2280), ("A1", 1, 6, 12, 660), ("Ahat1", 1, 12, 12, 1308),
    ("R1", 4, 60, 12, 25968), ("A2", 1, 24, 24, 5208), ("Ahat2", 1, 24, 24, 5208), ("R2", 4, 72, 24, 62304),
]
STACKS = [([3, 3, 12], [3, 12, 24]), ([3, 12, 24], [10, 16, 30]), ([3, 3], [3, 12]), ([2, 4, 8, 16], [4, 8, 16, 32])]


def _rows(a):
    return [(m.name, m.cs, m.ic, m.oc, n) for m, n in ap.param_rows(a)]


@pytest.mark.criterion(1, "parameter tables reproduced exactly")
def test_parameter_tables(capsys):
    t0 = time.perf_counter()
    assert _rows(ap.build_preset("rbp3")) == TABLE_RBP
    assert _rows(ap.build_preset("lotter3")) == TABLE_LOTTER
    assert ap.total_params(ap.build_preset("rbp3")) == 65_799
    assert ap.total_params(ap.build_preset("lotter3")) == 103_020
    assert ap.total_params(ap.build_preset("rbp3_gru")) == 50_451
    assert ap.total_params(ap.build_preset("rbp", [3, 3], [3, 12])) == 9_951
    assert ap.total_params(ap.build_preset("rbp", [3, 12, 24], [10, 16, 30])) == 162_641
    assert main(["arch", "params", "rbp3"]) == 0
    assert "65,799" in capsys.readouterr().out
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.criterion(2, "rbp passes, lotter fails with exactly two violation classes")
def test_protocol_conformance():
    t0 = time.perf_counter()
    for st_, rst in STACKS:
        rbp = ap.build_preset("rbp", st_, rst)
        ap.link_table(rbp)
        assert ap.validate_rb_protocol(rbp).passed, (st_, rst)
        lot = ap.build_preset("lotter", st_, rst)
        ap.link_table(lot)
        assert ap.validate_rb_protocol(lot).rules == {ap.RR_FEEDBACK, ap.EE_FEEDFORWARD}, (st_, rst)
    assert time.perf_counter() - t0 < 1.0


def _rb_case(rng):
    n, d = rng.integers(1, 9, size=2)
    W = rng.normal(size=(d, n))
    r = rng.normal(size=d)
    I = rng.normal(size=n)
    layer = rb.RBLayer(W=W, r=r, k1=0.1, k2=0.1)
    e = rb.rb_error(I, rb.rb_predict(layer)).e
    # descent steps are -k/2 times the gradient of J = |I - W^T r|^2
    g_r = fd_gradient(lambda x: rb.rb_error(I, W.T @ x).J, r)
    g_W = fd_gradient(lambda M: rb.rb_error(I, M.T @ r).J, W)
    return max(relative_error((rb.rb_update_r(layer, e) - r) / (-0.05), g_r, 1e-6),
               relative_error((rb.rb_update_w(layer, e, r) - W) / (-0.05), g_W, 1e-6))


def _fe_case(rng):
    s = fe.ScalarFE(phi=rng.uniform(-3, 3), e_p=0.0, e_u=0.0, v_p=rng.uniform(-3, 3),
                    sigma_p2=rng.uniform(0.1, 10), sigma_u2=rng.uniform(0.1, 10),
                    theta=rng.uniform(-3, 3), u=rng.uniform(-3, 3))
    # error nodes at equilibrium for the current phi
    s = replace(s, e_p=(s.phi - s.v_p) / s.sigma_p2, e_u=(s.u - s.theta * s.phi) / s.sigma_u2)
    worst = relative_error(fe.scalar_derivatives(s)[0],
                           fd_gradient(lambda x: fe.free_energy(s, x[0]), [s.phi])[0], 1e-6)
    d = fe.learning_directions(s)
    for k in fe.LEARNABLE:
        g = fd_gradient(lambda x: fe.free_energy(replace(s, **{k: x[0]})), [getattr(s, k)])[0]
        worst = max(worst, relative_error(d[k], g, 1e-6))
    # layered network, same check on every free phi
    dims = list(rng.integers(1, 6, size=rng.integers(2, 4)))
    n = fe.init_fenet(rng, dims, rng.normal(size=dims[0]), h=rng.choice(["identity", "tanh"]),
                      prior=rng.normal(size=dims[-1]))
    n = replace(n, phi=[n.phi[0]] + [rng.normal(size=k) for k in dims[1:]])
    preds = n.predictions()
    n = replace(n, e=[(p - q) / s_ for p, q, s_ in zip(n.phi, preds, n.sigma)])
    dphi, _ = fe.fenet_derivatives(n)
    for l in range(1, len(dims)):
        def f(x, l=l):
            return fe.fenet_energy(n, n.phi[:l] + [x] + n.phi[l + 1:])
        worst = max(worst, relative_error(dphi[l], fd_gradient(f, n.phi[l]), 1e-6))
    return worst


def _pcn_case(rng):
    n_layers = int(rng.integers(1, 3))
    dims = [int(x) for x in rng.integers(1, 9, size=n_layers + 1)]
    n_classes = int(rng.integers(2, 5))
    mode = str(rng.choice(pcn.MODES))
    T = int(rng.integers(0, 3))
    net = pcn.init_pcn(rng, dims, n_classes, T=T, k1=rng.uniform(0.01, 0.3), beta=rng.uniform(0, 1),
                       skip=bool(rng.integers(2)))
    # nonzero biases keep ReLU inputs off the kink
    net = net.with_params({k: (v if not k.startswith("b") else rng.normal(0, 0.5, v.shape))
                           for k, v in net.params().items()})
    X = rng.normal(size=(int(rng.integers(1, 6)), dims[0]))
    y = rng.integers(0, n_classes, size=X.shape[0])
    lr = 0.1
    new, _ = pcn.pcn_train_step(net, X, y, lr, mode, T)
    worst = 0.0
    p = net.params()
    for k, v in p.items():
        def f(x, k=k):
            return pcn.cross_entropy(net.with_params({**p, k: x}), X, y, mode, T)
        step = (v - new.params()[k]) / lr
        worst = max(worst, relative_error(step, fd_gradient(f, v), 1e-6))
    return worst


@pytest.mark.criterion(3, "analytic gradients match central differences (>= 100 instances each)")
def test_gradient_oracles():
    t0 = time.perf_counter()
    counts = {}

    def property_check(name, case):
        counts[name] = 0

        @settings(max_examples=110, deadline=None, derandomize=True, database=None)
        @given(seed=st.integers(0, 2**63 - 1))
        def check(seed):
            counts[name] += 1
            assert case(make_rng(seed)) < 1e-4

        check()

    property_check("rb", _rb_case)
    property_check("fe", _fe_case)
    property_check("pcn", _pcn_case)
    assert min(counts.values()) >= 100, counts
    assert time.perf_counter() - t0 < 30.0


@pytest.mark.criterion(4, "scalar fixed point within 1e-4; one-layer FENet trace within 1e-12")
def test_free_energy_fixed_point():
    t0 = time.perf_counter()
    rng = make_rng(4)
    for _ in range(50):
        sp, su = rng.uniform(0.1, 10, size=2)
        theta = rng.uniform(-3, 3)
        v_p, u = rng.uniform(-5, 5, size=2)
        s = fe.ScalarFE(phi=v_p, e_p=0.0, e_u=0.0, v_p=v_p, sigma_p2=sp, sigma_u2=su, theta=theta, u=u)
        s = fe.settle(s, 50_000, 0.01)
        assert abs(s.phi - fe.phi_star(v_p, sp, u, su, theta)) < 1e-4
        s0 = replace(s, phi=rng.normal(), e_p=rng.normal(), e_u=rng.normal())
        n = fe.scalar_as_fenet(s0)
        for _ in range(200):
            s0 = fe.scalar_step(s0, 0.01)
            n = fe.fenet_step(n, 0.01)
            assert abs(n.phi[1][0] - s0.phi) <= 1e-12
            assert abs(n.e[0][0] - s0.e_u) <= 1e-12
            assert abs(n.e[1][0] - s0.e_p) <= 1e-12
    assert time.perf_counter() - t0 < 30.0


@pytest.mark.criterion(5, "theta recovered within 10% in >= 8/10 seeds")
def test_generative_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in SEEDS:
        rng = make_rng(seed)
        u = 2.0 * rng.normal(5.0, 1.0, size=2000)
        s0 = fe.ScalarFE(phi=5.0, e_p=0.0, e_u=0.0, v_p=5.0, sigma_p2=1.0, sigma_u2=1.0, theta=1.0, u=0.0)
        s, _ = fe.run_free_energy_algorithm(s0, u, learn=("theta",))
        hits += abs(s.theta - 2.0) <= 0.2
    assert hits >= 8
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(6, "DIM recovers >= 14/16 bars in >= 8/10 seeds, KL settles")
def test_dim_bars():
    t0 = time.perf_counter()
    good = 0
    for seed in SEEDS:
        rng = make_rng(seed)
        X = dim.bars_dataset(rng, 8, 1 / 8, 1000)
        m = dim.init_model(rng, 16, 64)
        m, curve = dim.dim_train(m, X, 200, rng=rng)
        good += dim.bars_recovered(m.W, 8) >= 14
        assert np.all(np.diff(curve[-50:]) <= 1e-3), seed
    assert good >= 8
    assert time.perf_counter() - t0 < 120.0


@pytest.mark.criterion(7, "end-stopping in >= 8/10 seeds, removed by feedback ablation")
def test_endstopping():
    t0 = time.perf_counter()
    geo = rb.PatchGeometry()
    short, long_ = rb.bar_stimuli(geo)
    present = ablation_kills = 0
    for seed in SEEDS:
        rng = make_rng(seed)
        X = rb.bar_images(rng, 2000, geo)
        h, _ = rb.rb_train(rb.build_hierarchy(rng, geo), X, epochs=5, steps_per_input=30)
        es, el = rb.endstopping_experiment(h, short, long_)
        present += el < es
        as_, al = rb.endstopping_experiment(h, short, long_, ablate_feedback=True)
        ablation_kills += al >= as_ - 1e-9 * max(as_, 1.0)
    assert present >= 8
    assert ablation_kills >= 8
    assert time.perf_counter() - t0 < 300.0


@pytest.mark.criterion(8, "PCN modes at T=0 give bit-identical logits")
def test_pcn_t0_equivalence():
    t0 = time.perf_counter()
    rng = make_rng(8)
    for _ in range(1000):
        dims = [int(x) for x in rng.integers(1, 9, size=int(rng.integers(2, 5)))]
        net = pcn.init_pcn(rng, dims, int(rng.integers(2, 6)), T=0, skip=bool(rng.integers(2)),
                           beta=rng.uniform(0, 1), k1=rng.uniform(0, 1))
        x = rng.normal(size=(int(rng.integers(1, 5)), dims[0]))
        plain = pcn.pcn_forward(net, x, "plain")
        for mode in ("global", "local"):
            out = pcn.pcn_forward(net, x, mode, T=0)
            assert out.tobytes() == plain.tobytes()
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.criterion(9, "global T=3 >= plain in >= 7/10 seeds; prediction error drops in >= 9/10")
def test_pcn_benefit(tmp_path):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "pcn_classify.ini")
    wins = drops = 0
    for seed in SEEDS:
        rep = run_experiment(replace(cfg, seed=seed), tmp_path / str(seed))
        rows = {r[0]: r for r in _read(tmp_path / str(seed) / "test_metrics.csv")}
        wins += float(rows["global"][2]) >= float(rows["plain"][2])
        drops += float(rows["global"][4]) < float(rows["global"][3])
        assert rep.metrics["global_accuracy"] == float(rows["global"][2])
    assert wins >= 7, wins
    assert drops >= 9, drops
    assert time.perf_counter() - t0 < 300.0


def _read(path):
    lines = Path(path).read_text().splitlines()
    return [l.split(",") for l in lines[1:]]


@pytest.mark.criterion(10, "video-prediction metrics deliberately not reproduced")
def test_video_metrics_out_of_scope():
    # No recurrent convolutional execution exists; the table-level facts are
    # what criteria 1 and 2 check.
    assert not any(hasattr(ap, f) for f in ("forward", "train", "predict_frames"))
    assert ap.total_params(ap.build_preset("rb3")) == 162_641
    assert ap.validate_rb_protocol(ap.build_preset("rbp3")).passed


def _small_configs(tmp_path):
    overrides = {
        "rb_endstopping": {"epochs": "1", "steps": "5"}, "dim_bars": {"epochs": "5"},
        "fe_scalar": {"n_obs": "50", "inner_steps": "100"}, "fe_multilayer": {"steps": "300"},
        "pcn_classify": {"epochs": "3"},
    }
    ds_overrides = {"rb_endstopping": {"n_images": "40"}, "dim_bars": {"n_images": "100"}}
    out = []
    for name in overrides:
        text = (CONFIGS / f"{name}.ini").read_text()
        lines = []
        for line in text.splitlines():
            key = line.split("=")[0].strip()
            for table in (overrides[name], ds_overrides.get(name, {})):
                if "=" in line and key in table:
                    line = f"{key} = {table[key]}"
            lines.append(line)
        p = tmp_path / f"{name}.ini"
        p.write_text("\n".join(lines) + "\n")
        out.append(p)
    return out


@pytest.mark.criterion(11, "repeated runs with one seed give byte-identical CSVs")
def test_determinism(tmp_path):
    for cfg in _small_configs(tmp_path):
        outs = []
        for rep in ("a", "b"):
            d = tmp_path / f"{cfg.stem}_{rep}"
            assert main(["run", str(cfg), "--out-dir", str(d), "--trials", "2"]) == 0
            outs.append(d)
        csvs = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
        assert len(csvs) >= 2
        for rel in csvs:
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
