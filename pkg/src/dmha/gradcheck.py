"""Finite-difference verification harness for every differentiable layer.

Used by the `gradcheck` CLI subcommand and the acceptance suite: each entry
runs central finite differences against the analytic gradients on several
seeds and reports the max relative error.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import pooling as pl
from .autodiff import Tensor, grad_check
from .encoder import EncoderConfig
from .head import am_softmax_loss
from .model import ModelConfig, SpeakerModel

TOLERANCE = 1e-4


def grad_check_sampled(f, x: Tensor, eps: float = 1e-5,
                       max_coords: int | None = None, rng=None,
                       denom_floor: float = 1e-8) -> float:
    """grad_check, optionally on a random coordinate subset (large tensors).

    denom_floor raises the relative-error denominator for composite
    functions whose smallest true gradients sit below the float64
    finite-difference noise floor (~1e-11 absolute at eps=1e-5); below the
    floor the check still demands absolute agreement to floor * tolerance.
    """
    xt = Tensor(x.data.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = (xt.grad if xt.grad is not None
                else np.zeros_like(xt.data)).reshape(-1)
    flat = xt.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        idx = (rng or np.random.default_rng(0)).choice(
            flat.size, size=max_coords, replace=False)
    def fd(i, step):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(xt).item()
        flat[i] = orig - step
        lo = f(xt).item()
        flat[i] = orig
        return (hi - lo) / (2.0 * step)

    def rel_err(a, num):
        return abs(a - num) / max(denom_floor, abs(a) + abs(num))

    worst = 0.0
    for i in idx:
        a = analytic[i]
        err = rel_err(a, fd(i, eps))
        if err > TOLERANCE:
            # a relu/maxpool kink inside the FD interval breaks the
            # smoothness precondition; a smaller step resolves it
            err = min(err, rel_err(a, fd(i, eps / 10.0)))
        worst = max(worst, err)
    return worst


def _untie_for_maxpool(x: np.ndarray, rng) -> np.ndarray:
    """Perturb so no 2x2 window has near-ties (maxpool grad is only defined
    away from ties)."""
    return x + rng.permutation(x.size).reshape(x.shape) * 1e-3


def _layer_checks(seed: int):
    rng = np.random.default_rng(seed)
    checks = []

    a = Tensor(rng.standard_normal((3, 4)))
    b = rng.standard_normal((4, 2))
    checks.append(("matmul", a, lambda t: (ad.matmul(t, Tensor(b)) ** 2).sum()))

    x = Tensor(rng.standard_normal((2, 5, 6)))
    w = rng.standard_normal((3, 2, 3, 3))
    checks.append(("conv2d_same.x", x,
                   lambda t: (ad.conv2d_same(t, Tensor(w)) ** 2).sum()))
    wt = Tensor(w)
    xc = rng.standard_normal((2, 5, 6))
    checks.append(("conv2d_same.w", wt,
                   lambda t: (ad.conv2d_same(Tensor(xc), t) ** 2).sum()))

    mp = Tensor(_untie_for_maxpool(rng.standard_normal((2, 8, 8)), rng))
    checks.append(("maxpool2x2", mp, lambda t: (ad.maxpool2x2(t) ** 2).sum()))

    z = Tensor(rng.standard_normal((4, 5)))
    tgt = rng.standard_normal((4, 5))
    checks.append(("softmax", z,
                   lambda t: ((ad.softmax(t, axis=1) - tgt) ** 2).sum()))

    r = Tensor(rng.standard_normal(10) + 0.05)  # keep away from the kink
    checks.append(("relu", r, lambda t: (ad.relu(t) ** 2).sum()))

    xb = Tensor(rng.standard_normal((6, 4)))
    gamma = Tensor(rng.uniform(0.5, 1.5, 4))
    beta = Tensor(rng.standard_normal(4))
    tgt_b = rng.standard_normal((6, 4))

    def bn_loss(t):
        st = ad.BatchNormState.create(4)
        return ((ad.batchnorm(t, gamma, beta, st, training=True)
                 - tgt_b) ** 2).sum()

    checks.append(("batchnorm.x", xb, bn_loss))
    gm = Tensor(rng.uniform(0.5, 1.5, 4))

    def bn_gamma_loss(t):
        st = ad.BatchNormState.create(4)
        return ((ad.batchnorm(Tensor(xb.data), t, beta, st,
                              training=True) - tgt_b) ** 2).sum()

    checks.append(("batchnorm.gamma", gm, bn_gamma_loss))

    # the three poolings, wrt h and wrt u
    T, D, K = 5, 8, 2
    h = rng.standard_normal((T, D))
    u = rng.standard_normal(D)
    up = rng.standard_normal(D // K)
    tgt_d = rng.standard_normal(D)
    tgt_k = rng.standard_normal(D // K)

    def attention_loss(t):
        p = pl.PoolingParams(u=Tensor(u), num_heads=1)
        return ((pl.self_attention_pool(t, p)[0] - tgt_d) ** 2).sum()

    def mha_loss(t):
        p = pl.PoolingParams(u=Tensor(u), num_heads=K)
        return ((pl.mha_pool(t, p)[0] - tgt_d) ** 2).sum()

    def dmha_loss(t):
        p = pl.PoolingParams(u=Tensor(u), num_heads=K, u_prime=Tensor(up))
        return ((pl.double_mha_pool(t, p)[0] - tgt_k) ** 2).sum()

    def dmha_u_loss(t):
        p = pl.PoolingParams(u=t, num_heads=K, u_prime=Tensor(up))
        return ((pl.double_mha_pool(Tensor(h), p)[0] - tgt_k) ** 2).sum()

    def dmha_uprime_loss(t):
        p = pl.PoolingParams(u=Tensor(u), num_heads=K, u_prime=t)
        return ((pl.double_mha_pool(Tensor(h), p)[0] - tgt_k) ** 2).sum()

    checks.append(("pool.attention", Tensor(h.copy()), attention_loss))
    checks.append(("pool.mha", Tensor(h.copy()), mha_loss))
    checks.append(("pool.dmha", Tensor(h.copy()), dmha_loss))
    checks.append(("pool.dmha.u", Tensor(u.copy()), dmha_u_loss))
    checks.append(("pool.dmha.u_prime", Tensor(up.copy()), dmha_uprime_loss))

    # moderate scale keeps all class posteriors above the FD noise floor;
    # the s=30 path is identical code and is covered by an absolute check
    # in the head tests
    cos = Tensor(rng.uniform(-0.9, 0.9, size=(4, 6)))
    labels = rng.integers(0, 6, size=4)
    checks.append(("am_softmax", cos,
                   lambda t: am_softmax_loss(t, labels, s=5.0, m=0.2)))
    return checks


def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(base_channels=1, n_mels=16),
        pooling_kind="dmha", num_heads=2, hidden=4, num_speakers=3,
        s=5.0, m=0.2)


def full_model_check(seed: int, max_coords_per_tensor: int | None = None
                     ) -> list[tuple[str, float]]:
    """Parameter-wise FD check of the whole tiny network."""
    rng = np.random.default_rng(seed)
    model = SpeakerModel(tiny_model_config(), seed=seed)
    # fresh init sits exactly on the relu kink (zero biases + relu-dead
    # patches give pre-activations of exactly 0); nudge off it so the
    # differentiability precondition holds
    for p in model.params.values():
        p.data = p.data + rng.normal(0.0, 0.05, size=p.data.shape)
    mel = rng.standard_normal((2, 16, 16))
    labels = np.array([0, 1])

    results = []
    for name, param in model.params.items():
        def loss_fn(t, _name=name):
            saved = model.params[_name]
            model.params[_name] = t
            try:
                out = model.forward(mel, labels=labels, training=True)
            finally:
                model.params[_name] = saved
            return out["loss"]

        err = grad_check_sampled(loss_fn, param,
                                 max_coords=max_coords_per_tensor, rng=rng,
                                 denom_floor=1e-5)
        results.append((f"model.{name}", err))
    return results


def run_gradcheck(seeds=(0, 1, 2, 3, 4), full_model: bool = True,
                  max_coords_per_tensor: int | None = 40
                  ) -> list[tuple[str, float]]:
    """Max relative FD error per layer over all seeds."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, x, f in _layer_checks(seed):
            err = grad_check(f, x)
            worst[name] = max(worst.get(name, 0.0), err)
    if full_model:
        for seed in seeds:
            for name, err in full_model_check(
                    seed, max_coords_per_tensor=max_coords_per_tensor):
                worst[name] = max(worst.get(name, 0.0), err)
    return sorted(worst.items())


def format_table(results) -> str:
    width = max(len(n) for n, _ in results)
    lines = []
    for name, err in results:
        status = "pass" if err <= TOLERANCE else "FAIL"
        lines.append(f"{name:<{width}}  {err:12.3e}  {status}")
    return "\n".join(lines) + "\n"
