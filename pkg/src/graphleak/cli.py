"""Command line entry point.

Exit status: 0 on success, 1 on usage errors (bad flags, missing config
file), 2 when the requested computation fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import attack, defense, experiments
from .encoders import Arch, InitScheme, Mode, NagConfig, encode, init_weights
from .generators import ErSpec, SbmSpec, gen_er, gen_features, gen_sbm
from .graph import DatasetBundle, NodeSubset, induced_subgraph, load_bundle, save_bundle
from .io import Checkpoint, load_checkpoint, load_matrix, save_checkpoint, save_matrix
from .training import Scheme, TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _print(**kv):
    for k, v in kv.items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")


def _split(n: int) -> dict[str, NodeSubset]:
    ids = np.arange(n)
    return {"train": NodeSubset.of(ids[0::2]), "test": NodeSubset.of(ids[1::2])}


def cmd_gen(a) -> None:
    if a.kind == "ER":
        p = math.log(a.n) / a.n if a.p is None else a.p
        g = gen_er(ErSpec(a.n, p), (a.seed, "graph"))
        labels = np.zeros(a.n, dtype=np.int64)
    else:
        g, labels = gen_sbm(SbmSpec(a.n, a.K, a.p if a.p is not None else 0.3, a.q), (a.seed, "graph"))
    X = gen_features(a.n, a.d, (a.seed, "features"))
    save_bundle(DatasetBundle(g, X, labels, _split(a.n)), a.out)
    _print(nodes=g.node_count, edges=g.num_edges, out=a.out)


def _weights(a, bundle):
    if a.checkpoint:
        ck = load_checkpoint(a.checkpoint)
        return ck.arch, ck.weights
    arch = Arch.parse(a.arch)
    return arch, init_weights(a.d, a.L, a.init, (a.seed, "init"), arch, d_in=bundle.d)


def cmd_encode(a) -> None:
    bundle = load_bundle(a.bundle)
    arch, weights = _weights(a, bundle)
    cfg = NagConfig() if arch is Arch.LINEAR else NagConfig(sigma=a.sigma, mode=Mode(a.mode))
    H = encode(bundle.graph, bundle.features, weights, arch, cfg, (a.seed, "encode"))
    save_matrix(H, a.out)
    _print(rows=H.shape[0], cols=H.shape[1], out=a.out)


def cmd_attack(a) -> None:
    bundle = load_bundle(a.bundle)
    H = load_matrix(a.reps)
    g = bundle.graph
    if a.target == "TEST_SUBGRAPH":
        g, _ = induced_subgraph(g, bundle.masks["test"])
        H = H[bundle.masks["test"].ids]
    scores = attack.score_pairs(H, g, attack.SimilarityKind(a.sim))
    if a.scores_csv:
        scores.to_csv(a.scores_csv)
    tau, m = attack.best_threshold(scores)
    _print(pairs=len(scores), auroc=attack.auroc(scores), best_err=m.err, best_tau=tau, fpr=m.fpr, fnr=m.fnr)
    if a.tau is not None:
        r = attack.rates(scores, a.tau)
        _print(tau=a.tau, fpr_at_tau=r.fpr, fnr_at_tau=r.fnr, err_at_tau=r.err)


def cmd_train(a) -> None:
    bundle = load_bundle(a.bundle)
    arch = Arch.parse(a.arch)
    tc = TrainConfig(
        epochs=a.epochs, learning_rate=a.lr, scheme=Scheme(a.scheme), sigma=a.sigma,
        seed=a.seed, init=InitScheme(a.init),
    )
    res = train(bundle, arch, a.d, a.L, tc)
    if a.out:
        save_checkpoint(Checkpoint(arch, res.weights, res.head.weight, a.d, a.L, a.epochs, a.seed), a.out)
    _print(acc_noisy=res.acc_noisy, acc_clean=res.acc_clean, final_loss=res.losses[-1] if res.losses else math.nan)


def cmd_bound(a) -> None:
    ck = load_checkpoint(a.checkpoint)
    arch = Arch.parse(a.arch) if a.arch else ck.arch
    rep = defense.nag_bound(ck.weights, a.sigma, arch)
    _print(bound=rep.bound, C=rep.C, opnorm_sq=rep.opnorm_sq, sigma=rep.sigma, vacuous=int(rep.vacuous))


def cmd_edgerr(a) -> None:
    bundle = load_bundle(a.bundle)
    A = defense.edge_rr(bundle.graph, a.epsilon, a.seed)
    g = defense.sparsify(A)
    save_bundle(DatasetBundle(g, bundle.features, bundle.labels, bundle.masks, bundle.num_classes), a.out)
    _print(edges_before=bundle.graph.num_edges, edges_after=g.num_edges, bound=defense.edge_rr_bound(a.epsilon))


def cmd_sweep(a) -> None:
    path = Path(a.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    cfg = experiments.load_config(path)
    if a.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=a.seed)
    res = experiments.run_sweep(cfg, a.output, a.workers)
    errors = sum(r.status != "ok" for r in res.rows)
    _print(rows=len(res.rows), errors=errors, csv=res.csv_path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graphleak", description="Edge reconstruction attacks and noisy-aggregation defenses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help, seed_default=0):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.set_defaults(fn=fn)
        return sp

    def model_args(sp):
        sp.add_argument("--arch", default="GCN", type=str.upper)
        sp.add_argument("--d", type=int, default=128)
        sp.add_argument("--L", type=int, default=2)
        sp.add_argument("--init", default="HE", type=str.upper, choices=[s.value for s in InitScheme])
        sp.add_argument("--sigma", type=float, default=0.0)

    sp = add("gen", cmd_gen, "write a synthetic bundle")
    sp.add_argument("--kind", default="ER", type=str.upper, choices=["ER", "SBM"])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, default=64)
    sp.add_argument("--p", type=float)
    sp.add_argument("--K", type=int, default=1)
    sp.add_argument("--q", type=float, default=0.0)
    sp.add_argument("--out", required=True)

    sp = add("encode", cmd_encode, "bundle to representations file")
    sp.add_argument("--bundle", required=True)
    model_args(sp)
    sp.add_argument("--mode", default="STANDARD", type=str.upper, choices=["STANDARD", "NAG"])
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", required=True)

    sp = add("attack", cmd_attack, "similarity attack on representations")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--reps", required=True)
    sp.add_argument("--sim", default="COS", type=str.upper, choices=["COS", "CORR"])
    sp.add_argument("--target", default="FULL_GRAPH", type=str.upper, choices=["FULL_GRAPH", "TEST_SUBGRAPH"])
    sp.add_argument("--tau", type=float)
    sp.add_argument("--scores-csv")

    sp = add("train", cmd_train, "train an encoder and head")
    sp.add_argument("--bundle", required=True)
    model_args(sp)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--scheme", default="UNCONSTRAINED", type=str.upper, choices=[s.value for s in Scheme])
    sp.add_argument("--out")

    sp = add("bound", cmd_bound, "noisy-aggregation privacy bound for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--arch", type=str.upper)

    sp = add("edgerr", cmd_edgerr, "randomized response on a bundle's edges")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--out", required=True)

    sp = add("sweep", cmd_sweep, "run a sweep config", seed_default=None)
    sp.add_argument("--config", required=True)
    sp.add_argument("--output")
    sp.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"graphleak: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"graphleak: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
