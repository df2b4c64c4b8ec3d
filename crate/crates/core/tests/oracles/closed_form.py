"""Frozen values for tests/oracles.rs: empirical-measure closed forms.

Run with `python3 closed_form.py`; needs numpy, scipy and jax.
"""
import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp

jax.config.update("jax_enable_x64", True)

DS = jnp.array([[0.5, -1.0, 2.0], [-1.5, 0.25, 0.0], [1.0, 1.0, -0.5], [0.0, -2.0, 1.5]])


def mmse(x, t):
    logits = -jnp.sum((x - t * DS) ** 2, axis=1) / (2 * (1 - t) ** 2)
    w = jnp.exp(logits - logsumexp(logits))
    return w @ DS


def velocity(x, t):
    return (mmse(x, t) - x) / (1 - t)


def fmt(v):
    return "[" + ", ".join(f"{float(a):.17e}" for a in np.ravel(v)) + "]"


cases = [([0.3, -0.2, 0.9], 0.4), ([-0.7, 0.1, 0.2], 0.75), ([0.0, 0.0, 0.0], 0.1)]
u = jnp.array([0.2, -1.0, 0.5])
for x, t in cases:
    x = jnp.array(x)
    print(f"x={fmt(x)} t={t}")
    print("  mmse     ", fmt(mmse(x, t)))
    print("  velocity ", fmt(velocity(x, t)))
    print("  jvp(u)   ", fmt(jax.jvp(lambda y: velocity(y, t), (x,), (u,))[1]))
    print("  spectral ", f"{float(np.linalg.norm(np.asarray(jax.jacfwd(lambda y: velocity(y, t))(x)), 2)):.17e}")

# Uniform source on [-1, 1]: x is in cone i when |x - t x_i|_inf <= 1 - t,
# and the velocity averages (x_i - x) / (1 - t) over the active cones.
PTS = np.array([[-4.0], [0.0], [4.0]])
for x, t in [(0.1, 0.25), (-1.9, 0.5), (0.6, 0.1)]:
    active = [i for i in range(3) if abs(x - t * PTS[i, 0]) <= 1 - t]
    v = np.mean([(PTS[i, 0] - x) / (1 - t) for i in active])
    print(f"cone x={x} t={t} active={active} v={v:.17e}")
