"""Train the DeepSets quantile estimator at desk scale and compare it with the
plain empirical quantile on fresh prior draws.

Example: python scripts/nbe_desk_run.py --K 5000 --max-epochs 60
"""
import argparse
import time

import numpy as np

from evtkit import marginal, nbe
from evtkit.numopt import make_rng, spawn
from evtkit.synthetic import PotTruth, pot_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=5000)
    ap.add_argument("--m", type=int, default=2000)
    ap.add_argument("--q", type=float, default=0.999)
    ap.add_argument("--max-epochs", type=int, default=60)
    ap.add_argument("--n-boot", type=int, default=50)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--save", default=None, help="write trained weights here")
    a = ap.parse_args()
    g_data, g_prior, g_init, g_train, g_test = spawn(make_rng(a.seed), 5)
    data, _ = pot_dataset(PotTruth(), 2000, g_data)
    pools, body = nbe.build_prior(data, marginal.ModelFormula("y", threshold="x1", scale="x1"),
                                  0.6, a.n_boot, g_prior)
    cfg = nbe.TrainingConfig(K=a.K, m=a.m, q=a.q, max_epochs=a.max_epochs)
    t = time.perf_counter()
    res = nbe.train(nbe.init_network(g_init), cfg, pools, body, g_train)
    print(f"trained in {time.perf_counter() - t:.0f}s; best epoch {res.best_epoch}, "
          f"validation risk {res.val_risk[0]:.3f} -> {min(res.val_risk):.3f}")
    if a.save:
        nbe.save_network(res.network, a.save)
    Y, theta = nbe.make_training_data(pools, cfg, body, a.n_test, g_test)
    est = nbe.forward(res.network, Y)
    k = int(np.ceil(cfg.q * cfg.m)) - 1
    plain = np.partition(Y, k, axis=1)[:, k]
    print(f"mean asymmetric loss: network {np.mean(nbe.asymmetric_loss(theta, est)):.3f}, "
          f"empirical quantile {np.mean(nbe.asymmetric_loss(theta, plain)):.3f}")
    print(f"median estimate/truth: network {np.median(est / theta):.3f}, "
          f"empirical quantile {np.median(plain / theta):.3f}")


if __name__ == "__main__":
    main()
