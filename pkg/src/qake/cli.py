"""Single executable exposing all subcommands.

Exit status: 0 on success, 1 on domain errors, 2 on usage errors.  All
randomness flows from --seed.  An optional --config file supplies flat
key=value defaults using the same names as the flags; explicit flags
override the file, and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from . import adversary as A
from . import channel as C
from . import hashing as H
from . import keyrate as KR
from . import protocol as P
from . import reconciliation as REC
from . import reporting as R
from .bits import pack_bits, random_bits
from .errors import ConfigError, ParseError, QakeError


def _probability(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not a probability")
    return v


def _positive_int(text):
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be a positive integer")
    return v


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"{text} must be nonnegative")
    return v


def _loss_range(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("range must be start:stop:step")
    a, b, step = (float(p) for p in parts)
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"bad range {text}")
    out, v = [], a
    while v <= b + 1e-9:
        out.append(round(v, 10))
        v += step
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qake",
        description="Quantum authenticated key expansion toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="flat key=value defaults file")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("simulate", help="simulate raw pulse data")
    common(p)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--loss-db", type=_nonneg_float, required=True)
    p.add_argument("--qber", type=_probability, required=True)
    p.add_argument("--dark", type=_probability, default=0.0)
    p.add_argument("--basis-prob-x", type=_probability, default=0.5)

    p = sub.add_parser("run-session", help="run one protocol session")
    common(p)
    p.add_argument("--variant", choices=("qake", "prng"), default="qake")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--loss-db", type=_nonneg_float, default=1.0)
    p.add_argument("--qber", type=_probability, default=0.02)
    p.add_argument("--tag-bits", type=_positive_int, default=32)
    p.add_argument("--l-kb", type=_positive_int, default=32)
    p.add_argument("--ec", choices=("reveal", "ldpc"), default="reveal")
    p.add_argument("--secrets-file", help="read/write the shared secret store")

    p = sub.add_parser("attack", help="adversary trial statistics")
    common(p)
    p.add_argument("--strategy", choices=sorted(A.STRATEGIES), required=True)
    p.add_argument("--trials", type=_positive_int, required=True)
    p.add_argument("--tag-bits", type=_positive_int, default=8)
    p.add_argument("--n", type=_positive_int, default=256)
    p.add_argument("--variant", choices=("qake", "prng"), default="qake")
    p.add_argument("--tamper-kind", default="test")
    p.add_argument("--tamper-pos", type=int, default=0)
    p.add_argument("--plot", help="render outcome histogram to this file")

    p = sub.add_parser("keyrate", help="finite-key length optimization")
    common(p)
    p.add_argument("--variant", choices=KR.VARIANTS, default="qake")
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--loss-db-range", type=_loss_range)
    p.add_argument("--loss-db", type=_nonneg_float)
    p.add_argument("--p-det", type=_probability)
    p.add_argument("--qber", type=_probability, default=0.02)
    p.add_argument("--eps-sec", type=float, default=1e-15)
    p.add_argument("--eps-rob", type=float, default=1e-10)
    p.add_argument("--leak-mode", choices=("fraction", "formula"), default="formula")
    p.add_argument("--leak-fraction", type=_probability, default=0.30)
    p.add_argument("--f-ec", type=_nonneg_float, default=1.2)
    p.add_argument("--tag-bits", type=_positive_int, default=80)
    p.add_argument("--policy", choices=("analytic", "estimator"), default="analytic")
    p.add_argument("--plot", help="render the sweep figure to this file")

    p = sub.add_parser("ec-bench", help="reconciliation Monte-Carlo bench")
    common(p)
    p.add_argument("--ber", type=_probability, required=True)
    p.add_argument("--trials", type=_positive_int, required=True)
    p.add_argument("--plot", help="render leakage histogram to this file")

    p = sub.add_parser("hash-test", help="universal-hash evaluation and self-test")
    common(p)
    p.add_argument("--out-len", type=_positive_int, default=32)
    p.add_argument("--msg-len", type=_positive_int, default=128)
    p.add_argument("--msg", help="0/1 string to hash (random when omitted)")
    p.add_argument("--selftest", type=int, default=0,
                   help="check this many random instances against the dense matrix")
    return parser


def _inject_config(parser, argv: list[str]) -> list[str]:
    """Expand a --config file into flags placed before the explicit ones.

    Explicit flags appear later and therefore win; unknown config keys
    surface as unknown flags, which is a usage error.
    """
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return argv
    injected: list[str] = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError("expected key=value", line=lineno)
                key, value = (part.strip() for part in line.split("=", 1))
                if key == "config":
                    continue
                injected += [f"--{key}", value]
    except OSError as exc:
        parser.error(str(exc))
    except ParseError as exc:
        parser.error(f"{path}: {exc}")
    if not argv:
        return injected
    return [argv[0]] + injected + argv[1:]


def _cmd_simulate(ns) -> int:
    src = C.SourceConfig(basis_prob_x=ns.basis_prob_x)
    ch = C.ChannelConfig.from_loss_db(ns.loss_db, ns.qber, ns.dark)
    raw = C.simulate_session(src, ch, ns.n, ns.seed)
    if not ns.out:
        raise ConfigError("simulate requires --out")
    C.save_raw_data(raw, ns.out)
    det = int(raw.detected.sum())
    print(f"wrote {raw.n} rounds to {ns.out} ({det} detections, "
          f"rate {det / raw.n:.4g})")
    return 0


def _cmd_run_session(ns) -> int:
    src = C.SourceConfig()
    ch = C.ChannelConfig.from_loss_db(ns.loss_db, ns.qber)
    rng = np.random.default_rng(np.random.SeedSequence((ns.seed, 0x5EC)))
    label_a = label_b = 1
    if ns.secrets_file and os.path.exists(ns.secrets_file):
        with open(ns.secrets_file, "rb") as fh:
            buf = fh.read()
        secrets, off = P.SharedSecrets.deserialize(buf)
        import struct
        label_a, label_b = struct.unpack_from("<II", buf, off)
    else:
        secrets = P.make_secrets(rng, ns.n, ns.tag_bits, ns.l_kb,
                                 variant=ns.variant)
    th = P.relaxed_thresholds(tag_bits=ns.tag_bits, l_kb=ns.l_kb,
                              variant=ns.variant)
    cfg = P.SessionConfig(n=ns.n, variant=ns.variant, thresholds=th, ec=ns.ec,
                          seed=ns.seed)
    alice = P.PartyConfig(secrets=secrets.clone(), label=label_a)
    bob = P.PartyConfig(secrets=secrets.clone(), label=label_b)
    if ns.variant == "prng":
        bases = P.prng_expand_basis(secrets.basis_seed(max(label_a, label_b)), ns.n)
        raw = C.simulate_session(src, ch, ns.n, ns.seed, alice_bases=bases,
                                 bob_bases=bases.copy())
    else:
        raw = C.simulate_session(src, ch, ns.n, ns.seed)
    out = P.run_session(cfg, alice, bob, raw, src=src)
    dump = P.dump_transcript(out.transcript)
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(dump)
    else:
        sys.stdout.write(dump)
    if ns.secrets_file:
        import struct
        store = alice.secrets  # both sides agree after an honest round
        with open(ns.secrets_file, "wb") as fh:
            fh.write(store.serialize())
            fh.write(struct.pack("<II", out.label_a, out.label_b))
    print(f"F_A={out.f_a} F_B={out.f_b} keys_match={out.keys_match} "
          f"labels=({out.label_a},{out.label_b}) leak_bits={out.leak_bits}")
    return 0


def _cmd_attack(ns) -> int:
    cls = A.STRATEGIES[ns.strategy]
    if ns.strategy == "tamper":
        strategy = cls(ns.tamper_kind, ns.tamper_pos)
    elif ns.strategy == "desync-labels":
        strategy = cls(1)
    else:
        strategy = cls()
    tcfg = A.TrialConfig(n=ns.n, tag_bits=ns.tag_bits, variant=ns.variant)
    stats = A.run_trials(strategy, tcfg, ns.trials, ns.seed)
    checks = A.check_bounds(stats, A.ToyBounds.for_tag_bits(ns.tag_bits))
    rows = [{"outcome": f"{a}|{b}", "count": c, "frequency": f"{c/stats.trials:.6g}"}
            for (a, b), c in sorted(stats.freq.items(), key=str)]
    rows.append({"outcome": "key_mismatch_accepts",
                 "count": stats.key_mismatch_accepts,
                 "frequency": f"{stats.key_mismatch_accepts/stats.trials:.6g}"})
    if ns.out:
        R.write_csv(ns.out, ("outcome", "count", "frequency"), rows)
    for row in rows:
        print(f"{row['outcome']}: {row['count']} ({row['frequency']})")
    for c in checks:
        flag = " UNDERPOWERED" if c.underpowered else ""
        print(f"{c.name}: empirical={c.empirical:.6g} bound={c.bound:.6g} "
              f"ci=[{c.ci_low:.6g},{c.ci_high:.6g}] "
              f"{'pass' if c.passed else 'FAIL'}{flag}")
    if ns.plot:
        R.render_attack_figure(stats, ns.plot, ns.strategy)
    return 0


def _cmd_keyrate(ns) -> int:
    loss_db = ns.loss_db
    if loss_db is None and ns.p_det is None:
        if not ns.loss_db_range:
            raise ConfigError("need --loss-db, --loss-db-range or --p-det")
        loss_db = ns.loss_db_range[0]  # placeholder; the sweep replaces it
    model = KR.ExperimentModel(
        n_pulses=ns.n, variant=ns.variant,
        channel=(C.ChannelConfig.from_loss_db(loss_db, ns.qber)
                 if loss_db is not None else None),
        p_det=ns.p_det, qber=ns.qber, leak_mode=ns.leak_mode,
        leak_fraction=ns.leak_fraction, f_ec=ns.f_ec,
        tag_av_bits=ns.tag_bits, tag_bv_bits=ns.tag_bits,
        eps_sec_target=ns.eps_sec, eps_rob_target=ns.eps_rob,
        threshold_policy=ns.policy)
    if ns.loss_db_range:
        threads = int(os.environ.get("QAKE_THREADS", "1"))
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            losses = ns.loss_db_range
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda d: KR.sweep(model, [d])[0], losses))
        else:
            results = KR.sweep(model, ns.loss_db_range)
    else:
        results = [KR.optimize(model)]
    rows = R.keyrate_rows(results, ns.n)
    if ns.out:
        R.write_csv(ns.out, R.KEYRATE_COLUMNS, rows)
    for row in rows:
        print(R.kv_block(row), end="" if len(rows) == 1 else "\n")
    if ns.plot:
        R.render_keyrate_figure(results, ns.n, ns.plot, ns.variant)
    return 0


def _cmd_ec_bench(ns) -> int:
    outcomes = REC.run_bench(ns.ber, ns.trials, ns.seed)
    rows = [{"trial": i, "rounds_used": o.rounds_used,
             "leakage_bits": o.leakage_bits, "accepted": int(o.accepted),
             "fell_back": int(o.fell_back_to_reveal)}
            for i, o in enumerate(outcomes)]
    if ns.out:
        R.write_csv(ns.out, ("trial", "rounds_used", "leakage_bits",
                             "accepted", "fell_back"), rows)
    n = len(outcomes)
    mean_leak = sum(o.leakage_bits for o in outcomes) / n
    in_ladder = sum(1 for o in outcomes if not o.fell_back_to_reveal)
    print(f"trials={n} in_ladder_accepted={in_ladder} "
          f"fallbacks={n - in_ladder} mean_leakage_bits={mean_leak:.1f} "
          f"mean_leak_fraction={mean_leak / (8 * REC.BLOCK_BYTES):.4f}")
    if ns.plot:
        R.render_ec_figure(outcomes, ns.plot)
    return 0


def _cmd_hash_test(ns) -> int:
    rng = np.random.default_rng(ns.seed)
    if ns.selftest:
        from .hashing import toeplitz_matrix
        for _ in range(ns.selftest):
            out = int(rng.integers(1, 24))
            m = int(rng.integers(1, 260))
            seed = H.random_seed(rng, out, m)
            msg = random_bits(rng, m)
            want = toeplitz_matrix(seed) @ msg % 2
            got = H.toeplitz_hash(seed, msg)
            if not (want == got).all():
                print("self-test FAILED")
                return 1
        print(f"self-test passed on {ns.selftest} random instances")
        return 0
    seed = H.random_seed(rng, ns.out_len, ns.msg_len)
    if ns.msg:
        from .bits import bits_from_int_list
        msg = bits_from_int_list(ns.msg)
        if msg.size != ns.msg_len:
            raise ConfigError(f"--msg must have {ns.msg_len} bits")
    else:
        msg = random_bits(rng, ns.msg_len)
    tag = H.toeplitz_hash(seed, msg)
    print(f"seed={seed.serialize().hex()}")
    print(f"message={pack_bits(msg).hex()}")
    print(f"digest={H.Tag(tag).serialize().hex()}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "run-session": _cmd_run_session,
    "attack": _cmd_attack,
    "keyrate": _cmd_keyrate,
    "ec-bench": _cmd_ec_bench,
    "hash-test": _cmd_hash_test,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = parser.parse_args(_inject_config(parser, argv))
    try:
        return _COMMANDS[ns.command](ns)
    except QakeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
