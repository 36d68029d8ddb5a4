#!/usr/bin/env python3
"""Generate the (x, t) reference tables shipped in data/.

burgers_reference.csv     u_t + u u_x = (0.01/pi) u_xx, u(x,0) = -sin(pi x), u(+-1,t) = 0.
                          Exact Cole-Hopf representation; the Gaussian-weighted integrals
                          are evaluated with the trapezoid rule on z in [-12, 12]
                          (spectrally accurate for this integrand) on a 512 x 201 grid.
allen_cahn_reference.csv  u_t = 1e-4 u_xx + 5u - 5u^3, u(x,0) = x^2 cos(pi x), periodic.
                          Fourier pseudo-spectral ETDRK4 (Kassam-Trefethen contour
                          quadrature for the phi functions), 512 modes, dt = 1e-5,
                          sampled on the same 512 x 201 grid (x = 1 duplicates x = -1).

Both files are x-major with header x,t,u.
"""

import argparse
import pathlib

import numpy as np

NX, NT = 512, 201


def burgers(nodes: int = 4001) -> np.ndarray:
    nu = 0.01 / np.pi
    xs = np.linspace(-1.0, 1.0, NX)
    ts = np.linspace(0.0, 1.0, NT)
    z = np.linspace(-12.0, 12.0, nodes)
    w = np.exp(-z**2)
    out = np.empty((NX, NT))
    for j, t in enumerate(ts):
        if t == 0.0:
            out[:, j] = -np.sin(np.pi * xs)
            continue
        eta = np.sqrt(4.0 * nu * t) * z
        y = xs[:, None] - eta[None, :]
        log_f = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
        log_f -= log_f.max(axis=1, keepdims=True)
        f = np.exp(log_f) * w[None, :]
        out[:, j] = -(np.sin(np.pi * y) * f).sum(axis=1) / f.sum(axis=1)
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = -np.sin(np.pi * xs)
    return xs, ts, out


def allen_cahn(modes: int = 512, dt: float = 1e-5) -> np.ndarray:
    x = -1.0 + 2.0 * np.arange(modes) / modes
    u = x**2 * np.cos(np.pi * x)
    k = np.pi * np.fft.fftfreq(modes, d=1.0 / modes)
    lin = -1e-4 * k**2 + 5.0
    e = np.exp(dt * lin)
    e2 = np.exp(dt * lin / 2.0)
    m = 32
    r = np.exp(1j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    lr = dt * lin[:, None] + r[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
    f2 = dt * np.real(np.mean((2.0 + lr + np.exp(lr) * (-2.0 + lr)) / lr**3, axis=1))
    f3 = dt * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + np.exp(lr) * (4.0 - lr)) / lr**3, axis=1))

    def nonlin(vh):
        v = np.real(np.fft.ifft(vh))
        return np.fft.fft(-5.0 * v**3)

    ts = np.linspace(0.0, 1.0, NT)
    steps_per_sample = int(round((ts[1] - ts[0]) / dt))
    vh = np.fft.fft(u)
    snaps = [u.copy()]
    for _ in range(NT - 1):
        for _ in range(steps_per_sample):
            nv = nonlin(vh)
            a = e2 * vh + q * nv
            na = nonlin(a)
            b = e2 * vh + q * na
            nb = nonlin(b)
            c = e2 * a + q * (2.0 * nb - nv)
            nc = nonlin(c)
            vh = e * vh + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        snaps.append(np.real(np.fft.ifft(vh)))
    grid = np.array(snaps).T  # modes x NT
    xs = np.append(x, 1.0)
    grid = np.vstack([grid, grid[0:1, :]])
    return xs, ts, grid


def write(path: pathlib.Path, xs, ts, u) -> None:
    with path.open("w") as fh:
        fh.write("x,t,u\n")
        for i, xv in enumerate(xs):
            for j, tv in enumerate(ts):
                fh.write(f"{xv:.17g},{tv:.17g},{u[i, j]:.17g}\n")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write(out / "burgers_reference.csv", *burgers())
    write(out / "allen_cahn_reference.csv", *allen_cahn())


if __name__ == "__main__":
    main()
