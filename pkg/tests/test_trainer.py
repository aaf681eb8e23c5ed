import math
from dataclasses import replace

import numpy as np
import pytest

from risbeam import channel, network, trainer
from risbeam import quantizer as qz
from risbeam.config import SystemConfig, TrainConfig
from risbeam.errors import ConfigError


def tiny_config(**kw):
    # close-range geometry with unit reference gain keeps SINRs O(1), so
    # loss differences are far above float noise
    defaults = dict(M=2, N=4, K=1, b=1, pt_dbm=30.0, noise_dbm=10.0,
                    beta0_db=0.0, ris_pos=(2.0, 0.0),
                    user_center=(2.0, 1.5), user_radius=0.5)
    defaults.update(kw)
    return SystemConfig(**defaults)


def tiny_train_config(**kw):
    defaults = dict(batch_size=16, max_epochs=8, patience=8,
                    plateau_patience=3, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


# --- losses -----------------------------------------------------------------

def test_loss_perfect_values():
    gamma_25 = 2 ** 2.5 - 1.0          # rate log2(1+gamma) = 2.5
    assert trainer.loss_perfect([[gamma_25]], [1.0]) == pytest.approx(-2.5)
    one = trainer.loss_perfect([[gamma_25]], [1.0])
    two = trainer.loss_perfect([[gamma_25], [gamma_25]], [1.0])
    assert two == pytest.approx(2 * one)
    assert trainer.loss_perfect(np.zeros((3, 2)), [1.0, 1.0]) == 0.0


def test_loss_perfect_ordering_matches_wsr():
    rng = np.random.default_rng(0)
    q = [1.0, 2.0]
    g1 = rng.uniform(0, 3, (5, 2))
    g2 = rng.uniform(0, 3, (5, 2))
    wsr1 = (np.log2(1 + g1) @ q).sum()
    wsr2 = (np.log2(1 + g2) @ q).sum()
    assert (trainer.loss_perfect(g1, q) < trainer.loss_perfect(g2, q)) \
        == (wsr1 > wsr2)


def test_loss_penalized_cases():
    quant = qz.QuantizerParams(b=1, c=1.0)
    gamma = np.array([[1.0], [2.0]])
    q = [1.0]
    n_phases = 6
    at_boundary = np.full((2, n_phases), quant.rho[0])
    base = trainer.loss_perfect(gamma, q)
    assert trainer.loss_penalized(gamma, at_boundary, q, 0.0, quant) \
        == pytest.approx(base)
    # penalty at a boundary is a*c per phase: adds lam * N * pi/2 per sample
    got = trainer.loss_penalized(gamma, at_boundary, q, 0.5, quant)
    assert got == pytest.approx(base + 0.5 * 2 * n_phases * math.pi / 2)
    double = trainer.loss_penalized(gamma, at_boundary, q, 1.0, quant)
    assert double - base == pytest.approx(2 * (got - base))


def test_loss_averaged_collapses_at_eta_zero():
    cfg = tiny_config(K=2)
    samples = channel.generate_samples(cfg, 3, 0.0, seed=1)
    G, h = trainer.stack_channels(samples)
    rng = np.random.default_rng(2)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, (3, cfg.N)))
    W = rng.standard_normal((3, cfg.M, cfg.K)) \
        + 1j * rng.standard_normal((3, cfg.M, cfg.K))
    single = trainer.loss_averaged(theta, W, G[None], h[None], cfg.q,
                                   cfg.sigma2)
    G8, h8 = channel.true_channel_draws(G, h, 0.0, 8, rng)
    eight = trainer.loss_averaged(theta, W, G8, h8, cfg.q, cfg.sigma2)
    assert eight == pytest.approx(8 * single, rel=1e-12)


def test_loss_averaged_law_of_large_numbers():
    cfg = tiny_config(K=2)
    samples = channel.generate_samples(cfg, 16, 0.6, seed=3)
    G, h = trainer.stack_channels(samples)
    rng = np.random.default_rng(4)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, (16, cfg.N)))
    W = rng.standard_normal((16, cfg.M, cfg.K)) \
        + 1j * rng.standard_normal((16, cfg.M, cfg.K))
    Ga, ha = channel.true_channel_draws(G, h, 0.6, 64, np.random.default_rng(5))
    Gb, hb = channel.true_channel_draws(G, h, 0.6, 1024, np.random.default_rng(6))
    a = trainer.loss_averaged(theta, W, Ga, ha, cfg.q, cfg.sigma2) / 64
    b = trainer.loss_averaged(theta, W, Gb, hb, cfg.q, cfg.sigma2) / 1024
    assert a == pytest.approx(b, rel=0.05)


def test_compute_lambda_reference_points():
    # published operating points, rounded to two decimals there
    assert trainer.compute_lambda(4.890, 1.528) == pytest.approx(0.32, abs=0.005)
    assert trainer.compute_lambda(5.225, 1.382) == pytest.approx(0.38, abs=0.005)
    assert trainer.compute_lambda(1.0, 1.0) == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        trainer.compute_lambda(1.0, 0.0)


# --- fit --------------------------------------------------------------------

def make_split(cfg, n_train=48, n_val=12, eta=0.0, seed=10):
    samples = channel.generate_samples(cfg, n_train + n_val, eta, seed)
    return samples[:n_train], samples[n_train:]


def test_fit_smoke_and_history():
    cfg = tiny_config()
    train, val = make_split(cfg)
    tc = tiny_train_config()
    res = trainer.fit(train, val, cfg, tc)
    assert 1 <= len(res.history) <= tc.max_epochs
    losses = [row["train_loss"] for row in res.history]
    assert losses[-1] < losses[0]          # it learns something
    for row in res.history:
        assert row["lr"] >= tc.lr_floor
        assert np.isfinite(row["val_wsr_soft"])
        assert np.isfinite(row["val_wsr_hard"])


def test_fit_deterministic_history():
    cfg = tiny_config()
    train, val = make_split(cfg)
    tc = tiny_train_config(max_epochs=5)
    r1 = trainer.fit(train, val, cfg, tc)
    r2 = trainer.fit(train, val, cfg, tc)
    assert len(r1.history) == len(r2.history)
    for a, b in zip(r1.history, r2.history):
        assert a == b


def test_fit_rejects_bad_split():
    cfg = tiny_config()
    train, val = make_split(cfg)
    with pytest.raises(ConfigError):
        trainer.fit(train[:1], val, cfg, tiny_train_config())
    with pytest.raises(ConfigError):
        trainer.fit(train, [], cfg, tiny_train_config())


def test_fit_learning_rate_plateau_floor():
    cfg = tiny_config()
    train, val = make_split(cfg)
    # aggressive schedule so the floor is reached quickly
    tc = tiny_train_config(max_epochs=20, plateau_patience=1,
                           plateau_factor=0.5, lr=1e-3, lr_floor=5e-4,
                           patience=20)
    res = trainer.fit(train, val, cfg, tc)
    lrs = [row["lr"] for row in res.history]
    assert min(lrs) >= tc.lr_floor


def test_history_csv(tmp_path):
    cfg = tiny_config()
    train, val = make_split(cfg)
    res = trainer.fit(train, val, cfg, tiny_train_config(max_epochs=3))
    path = tmp_path / "history.csv"
    trainer.write_history(str(path), res.history)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(trainer.HISTORY_COLUMNS)
    assert len(lines) == len(res.history) + 1
    for cell in lines[1].split(",")[1:]:
        assert np.isfinite(float(cell))


def test_averaged_training_runs():
    cfg = tiny_config(K=2)
    train, val = make_split(cfg, eta=0.5, seed=20)
    tc = tiny_train_config(max_epochs=3, loss_kind="averaged", error_draws=4)
    res = trainer.fit(train, val, cfg, tc)
    assert len(res.history) == 3
    assert np.isfinite(res.best_val_loss)


# --- algorithm drivers -------------------------------------------------------

class ScriptedTrainer:
    """Injectable train_fn producing a scripted WSR_p sequence."""

    def __init__(self, wsr_p_seq, wsr_t_seq=None):
        self.wsr_p_seq = wsr_p_seq
        self.wsr_t_seq = wsr_t_seq or [w * 1.001 for w in wsr_p_seq]
        self.calls = []

    def __call__(self, c, iteration):
        self.calls.append(c)
        i = iteration - 1
        return trainer.TrainResult(
            params=f"model-{iteration}", c=c, history=[], best_epoch=1,
            best_val_loss=-1.0, val_wsr_soft=self.wsr_t_seq[i],
            val_wsr_hard=self.wsr_p_seq[i], mean_f_cons=1.0, gap=0.0,
            train_config=None)


def test_search_c_stops_at_first_decrease():
    cfg = tiny_config()
    tc = tiny_train_config()
    script = ScriptedTrainer([4.0, 4.2, 4.1])
    out = trainer.search_c(None, None, cfg, tc, c_init=5.0, train_fn=script)
    assert out.result.params == "model-2"
    assert len(out.states) == 3


def test_search_c_small_gap_decrements():
    cfg = tiny_config()
    tc = tiny_train_config(tau=0.005)
    # gaps below tau: c decreases by 1 each improving iteration
    script = ScriptedTrainer([4.0, 4.2, 4.1],
                             wsr_t_seq=[4.001, 4.201, 4.101])
    trainer.search_c(None, None, cfg, tc, c_init=5.0, train_fn=script)
    assert script.calls == [5.0, 4.0, 3.0]


def test_search_c_large_gap_increments():
    cfg = tiny_config()
    tc = tiny_train_config(tau=0.005)
    script = ScriptedTrainer([4.0, 4.2, 4.1], wsr_t_seq=[4.5, 4.7, 4.6])
    trainer.search_c(None, None, cfg, tc, c_init=5.0, train_fn=script)
    assert script.calls == [5.0, 6.0, 7.0]


def test_search_c_floor_terminates():
    cfg = tiny_config()
    tc = tiny_train_config(tau=0.005)
    script = ScriptedTrainer([4.0, 4.2, 4.4], wsr_t_seq=[4.001, 4.201, 4.401])
    out = trainer.search_c(None, None, cfg, tc, c_init=2.0, train_fn=script)
    # c: 2 -> 1, then a further decrement would cross the floor
    assert script.calls == [2.0, 1.0]
    assert out.c == 1.0
    assert out.result.params == "model-2"


def test_search_c_never_returns_worse_model():
    cfg = tiny_config()
    tc = tiny_train_config()
    rng = np.random.default_rng(7)
    seq = list(np.round(rng.uniform(3.5, 4.5, 6), 3))
    script = ScriptedTrainer(seq)
    out = trainer.search_c(None, None, cfg, tc, c_init=3.0, train_fn=script)
    returned = out.result.val_wsr_hard
    idx = seq.index(returned)
    if idx + 1 < len(script.calls):
        assert seq[idx + 1] < returned


def test_run_idqnn_wiring():
    cfg = tiny_config(b=2, K=2)
    train, val = make_split(cfg, n_train=32, n_val=8, seed=30)
    tc = tiny_train_config(max_epochs=3, batch_size=16)
    out = trainer.run_idqnn(train, val, cfg, tc)
    # pre-training must use the plain loss at c = 1
    assert out.pretrain.train_config.loss_kind == "perfect"
    assert out.pretrain.train_config.steepness == 1.0
    assert out.pretrain.train_config.penalty_weight == 0.0
    # the stored weight follows the heuristic exactly
    assert out.lam == pytest.approx(0.1 * out.wsr_c / out.f_cons_c)
    assert out.main_config.loss_kind == "penalized"
    assert out.main_config.penalty_weight == pytest.approx(out.lam)


def test_run_idqnn_averaged_variant():
    cfg = tiny_config(b=2, K=2)
    train, val = make_split(cfg, n_train=32, n_val=8, eta=0.4, seed=31)
    tc = tiny_train_config(max_epochs=2, batch_size=16,
                           loss_kind="averaged", error_draws=3)
    out = trainer.run_idqnn(train, val, cfg, tc)
    assert out.pretrain.train_config.loss_kind == "averaged"
    assert out.main_config.loss_kind == "averaged+penalized"


def test_split_samples():
    cfg = tiny_config()
    samples = channel.generate_samples(cfg, 10, 0.0, seed=40)
    a, b, c = trainer.split_samples(samples, 6, 2, 2)
    assert len(a) == 6 and len(b) == 2 and len(c) == 2
    assert a[0] is samples[0] and c[-1] is samples[9]
    with pytest.raises(ConfigError):
        trainer.split_samples(samples, 8, 2, 2)


def test_stack_inputs_width():
    cfg = tiny_config(K=2)
    samples = channel.generate_samples(cfg, 2, 0.0, seed=41)
    X = trainer.stack_inputs(samples)
    assert X.shape == (2, 2 * cfg.N * cfg.M + 2 * cfg.N * cfg.K)
