"""Command-line entry point: ``orderflow <subcommand> ...``.

Errors are reported on stderr as ``error: <code>: <message>`` with exit
status 2 for usage errors, 3 for bad data and 4 for numeric failures.
"""

import argparse
import ast
import csv
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, model, rollout, tokenizer
from .baselines import hawkes, zi
from .errors import OrderflowError
from .events import AssetMeta, Scope, read_stream, write_stream
from .lob_sim import SERIES_HEADER, run_simulation

# -- config -------------------------------------------------------------------

CONFIG_TARGETS = {
    "model": model.ModelConfig,
    "train": model.TrainConfig,
    "sampler": model.SamplerConfig,
    "calibration": tokenizer.CalibrationConfig,
}


def parse_config_text(text, where="config"):
    """``section.key = value`` lines; ``#`` starts a comment. Values are Python literals or bare strings."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or "." not in key:
            raise UsageError(f"{where}:{n}: expected 'section.key = value'")
        section, name = key.split(".", 1)
        if section not in CONFIG_TARGETS:
            raise UsageError(f"{where}:{n}: unknown section {section!r}")
        fields = {f.name for f in dataclasses.fields(CONFIG_TARGETS[section])}
        if name not in fields:
            raise UsageError(f"{where}:{n}: unknown key {key!r}")
        try:
            val = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            val = value
        out.setdefault(section, {})[name] = val
    return out


def load_config(args):
    cfg = {}
    if getattr(args, "config", None):
        cfg = parse_config_text(Path(args.config).read_text(), args.config)
    for item in getattr(args, "set", None) or []:
        for section, values in parse_config_text(item, "--set").items():
            cfg.setdefault(section, {}).update(values)
    return cfg


def build(section, cfg, **defaults):
    values = {**defaults, **cfg.get(section, {})}
    try:
        return CONFIG_TARGETS[section](**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{section}] {exc}") from None


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------

def read_streams(paths, fmt):
    return [read_stream(p, fmt) for p in paths]


def write_rows(path, header, rows):
    fh = open(path, "w", newline="") if path not in (None, "-") else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def read_tokens(path):
    """(n, 4) context tuples from a CSV with header ``liquidity,scope,price_level,trade``."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return rows.reshape(-1, 4)


TOKEN_HEADER = ("liquidity", "scope", "price_level", "trade")


def read_series(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != SERIES_HEADER:
            raise UsageError(f"{path}: expected series header {','.join(SERIES_HEADER)}")
        data = np.array([[float(x) for x in row] for row in r])
    return data[:, 0], data[:, 1]


# -- subcommands --------------------------------------------------------------

def cmd_calibrate(args):
    cfg = load_config(args)
    cal = build("calibration", cfg)
    if args.halflife is not None:
        cal.halflife = args.halflife
    schema = tokenizer.calibrate(read_streams(args.data, args.format), cal)
    tokenizer.save_schema(schema, args.out)


def cmd_encode(args):
    schema = tokenizer.load_schema(args.schema)
    rows = []
    for s in read_streams(args.data, args.format):
        rows.extend(tokenizer.encode_stream(s, schema, args.halflife).tolist())
    write_rows(args.out, TOKEN_HEADER, rows)


def cmd_decode(args):
    tokens = args.tokens or [t for line in sys.stdin for t in line.replace(",", " ").split()]
    schema = tokenizer.load_schema(args.schema) if args.schema else None
    bases = schema.trade_bases if schema else (2, 2, 16, 16, 16)
    for t in tokens:
        try:
            value = int(t)
        except ValueError:
            raise UsageError(f"not an integer token: {t!r}") from None
        digits = tokenizer.decode(value, bases)
        if args.detokenize:
            if schema is None:
                raise UsageError("--detokenize needs --schema")
            ev = tokenizer.detokenize(digits, schema)
            print(",".join(repr(x) for x in (ev.action, ev.side, ev.depth, ev.volume, ev.interarrival)))
        else:
            print(",".join(str(d) for d in digits))


def cmd_fit_zi(args):
    params = zi.fit_zi(read_streams(args.data, args.format), k=args.k, restarts=args.restarts, seed=args.seed)
    zi.save_zi(params, args.out)


def cmd_fit_hawkes(args):
    config = hawkes.HawkesFitConfig(
        n_terms=args.n_terms, diagonal=args.diagonal, max_iter=args.max_iter, seed=args.seed,
    )
    fit = hawkes.fit_hawkes(read_streams(args.data, args.format), config, strict=args.strict)
    hawkes.save_hawkes(fit.params, args.out)


def _meta(args):
    return AssetMeta(args.asset, args.adv, args.p0)


def cmd_gen_zi(args):
    stream = zi.sample_zi(zi.load_zi(args.params), args.n, args.seed, _meta(args), Scope(args.scope))
    write_stream(stream, args.out, args.format)


def cmd_gen_hawkes(args):
    orders = hawkes.simulate_hawkes(hawkes.load_hawkes(args.params), n_events=args.n, seed=args.seed)
    write_stream(orders.to_stream(_meta(args), Scope(args.scope)), args.out, args.format)


def cmd_replay(args):
    stream = read_stream(args.data, args.format)
    sim = run_simulation(stream, market_price_rule=args.market_price_rule)
    if args.fills:
        sim.write_fills(args.fills)
    if args.series:
        sim.write_series(args.series)


def cmd_train(args):
    cfg = load_config(args)
    schema = tokenizer.load_schema(args.schema)
    mcfg = build("model", cfg, vocab_trade=schema.vocab_size, n_price_level=schema.price_level.n_bins)
    tcfg = build("train", cfg)
    if args.steps is not None:
        tcfg.steps = args.steps
    if args.seed is not None:
        tcfg.seed = args.seed
    seqs = [tokenizer.encode_stream(s, schema) for s in read_streams(args.corpus, args.format)]
    result = model.train(seqs, mcfg, tcfg)
    model.save_checkpoint(result.model, args.out)
    if args.loss_curve:
        result.write_curve(args.loss_curve)


def _generator(args):
    if args.checkpoint:
        return model.load_checkpoint(args.checkpoint)
    if args.generator == "zi":
        return rollout.zi_source(zi.load_zi(args.params), args.seed)
    if args.generator == "hawkes":
        return rollout.hawkes_source(hawkes.load_hawkes(args.params), args.seed)
    raise UsageError("give --checkpoint or --generator zi|hawkes with --params")


def _rollout_config(args):
    cfg = load_config(args)
    schema = tokenizer.load_schema(args.schema)
    sampler = build("sampler", cfg, seed=args.seed)
    context = None
    p0 = args.p0
    if args.context:
        stream = read_stream(args.context, args.format)
        context = tokenizer.encode_stream(stream, schema)[-args.context_events:]
        p0 = stream.meta.opening_price if p0 is None else p0
    return rollout.RolloutConfig(
        schema, context, args.horizon, args.n, sampler,
        args.liquidity, args.scope, 100.0 if p0 is None else p0, args.seed,
    )


def _run_one(job):
    config, generator, index, injection = job
    return rollout.run_index(config, generator, index, injection)


def _run_batch(args, injection=None):
    config = _rollout_config(args)
    generator = _generator(args)
    if config.horizon < 0:
        rollout.run_rollout(config, generator)  # raises HorizonZero
    jobs = [(config, generator, i, injection) for i in range(config.n_rollouts)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        d = out / f"rollout_{i:03d}"
        d.mkdir(exist_ok=True)
        r.sim.write_series(d / "series.csv")
        r.sim.write_fills(d / "fills.csv")
        write_rows(d / "tokens.csv", (*TOKEN_HEADER, "injected"), [(*row, int(inj)) for row, inj in zip(r.tokens.tolist(), r.injected)])
        write_stream(r.to_stream(), d / "events.csv")
    rollout.write_trajectories(results, out / "trajectories.csv")


def cmd_rollout(args):
    _run_batch(args)


def cmd_inject(args):
    side = {"buy": 0, "sell": 1}[args.side]
    _run_batch(args, (side, args.mult))


def cmd_controllability(args):
    cfg = load_config(args)
    schema = tokenizer.load_schema(args.schema)
    sampler = build("sampler", cfg, seed=args.seed)
    rows = rollout.controllability_sweep(
        model.load_checkpoint(args.checkpoint), schema, args.n, args.horizon, sampler, args.p0,
    )
    rollout.write_controllability(rows, args.out)


def cmd_eval_fidelity(args):
    real = evaluation.FlowSummary.concat(
        evaluation.FlowSummary.from_stream(s) for s in read_streams(args.real, args.format)
    )
    gen = evaluation.FlowSummary.concat(
        evaluation.FlowSummary.from_stream(s) for s in read_streams(args.generated, args.format)
    )
    rows = evaluation.fidelity_report(real, gen, tuple(args.intervals))
    evaluation.write_report(rows, args.out)


def cmd_eval_stylized(args):
    if args.series:
        t, m = read_series(args.series)
    else:
        sim = run_simulation(read_stream(args.data, args.format))
        t, m = sim.time, sim.midprice
    facts = evaluation.stylized_facts(t, m, tuple(args.intervals), range(1, args.max_lag + 1), args.base_interval)
    write_rows(args.out, ("lag", "acf_returns", "acf_abs_returns", "band"), [
        (int(k), repr(float(a)), repr(float(b)), repr(float(facts["band"])))
        for k, a, b in zip(facts["lags"], facts["acf_returns"], facts["acf_abs_returns"])
    ])
    if args.kurtosis_out:
        write_rows(args.kurtosis_out, ("interval", "kurtosis"), [
            (repr(float(dt)), repr(float(k))) for dt, k in facts["kurtosis"].items()
        ])


def cmd_eval_drift(args):
    a = read_streams(args.period_a, args.format)
    b = read_streams(args.period_b, args.format)
    rows = evaluation.drift_report(a, b)
    evaluation.write_report(rows, args.out, "feature", {"period_a": args.label_a, "period_b": args.label_b})


def cmd_validate_sim(args):
    v = evaluation.validate_simulator(read_stream(args.data, args.format))
    write_rows(args.out, ("metric", "correlation"), [
        ("fill_volume_cdf", repr(v.volume_correlation)), ("lot_count_cdf", repr(v.lot_count_correlation)),
    ])


# -- parser -------------------------------------------------------------------

class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: UsageError: {message}\n")
        sys.exit(2)


def build_parser():
    p = Parser(prog="orderflow", description="Order-flow tokenization, simulation, generation and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=func)
        return sp

    def data_args(sp, name="--data", many=True, required=True):
        sp.add_argument(name, nargs="+" if many else None, required=required, help="event stream file(s)")
        if not any(a.dest == "format" for a in sp._actions):
            sp.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="stream file format")

    def config_args(sp):
        sp.add_argument("--config", help="config file of 'section.key = value' lines")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")

    def meta_args(sp):
        sp.add_argument("--asset", default="SYN", help="asset id of the output stream")
        sp.add_argument("--adv", type=float, default=1e6, help="average daily volume of the output stream")
        sp.add_argument("--p0", type=float, default=100.0, help="opening price")
        sp.add_argument("--scope", type=int, choices=(0, 1), default=0, help="0 market, 1 participant")

    sp = add("calibrate-tokenizer", cmd_calibrate, "fit tokenizer bin edges on a corpus")
    data_args(sp)
    sp.add_argument("--out", required=True, help="schema output file")
    sp.add_argument("--halflife", type=float, help="EW-VWAP halflife in seconds")
    config_args(sp)

    sp = add("encode", cmd_encode, "encode streams into context tuples (CSV)")
    data_args(sp)
    sp.add_argument("--schema", required=True, help="tokenizer schema file")
    sp.add_argument("--halflife", type=float, help="EW-VWAP halflife in seconds")
    sp.add_argument("--out", default="-", help="output CSV (default stdout)")

    sp = add("decode", cmd_decode, "split trade tokens into digits (reads stdin when no tokens are given)")
    sp.add_argument("tokens", nargs="*", help="trade tokens")
    sp.add_argument("--schema", help="tokenizer schema file (default bases 2,2,16,16,16)")
    sp.add_argument("--detokenize", action="store_true", help="print action,side,depth,volume,interarrival")

    sp = add("fit-zi", cmd_fit_zi, "fit the zero-intelligence baseline")
    data_args(sp)
    sp.add_argument("--out", required=True, help="parameter output file")
    sp.add_argument("--k", type=int, default=3, help="depth mixture components")
    sp.add_argument("--restarts", type=int, default=10, help="EM restarts")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    sp = add("fit-hawkes", cmd_fit_hawkes, "fit the compound Hawkes baseline")
    data_args(sp)
    sp.add_argument("--out", required=True, help="parameter output file")
    sp.add_argument("--n-terms", type=int, default=1, help="exponential terms per kernel")
    sp.add_argument("--diagonal", action="store_true", help="self-excitation only")
    sp.add_argument("--max-iter", type=int, default=5000, help="optimizer iterations")
    sp.add_argument("--strict", action="store_true", help="fail when the fit does not converge")
    sp.add_argument("--seed", type=int, default=0, help="random seed")

    for name, func, what in (("gen-zi", cmd_gen_zi, "zero-intelligence"), ("gen-hawkes", cmd_gen_hawkes, "compound Hawkes")):
        sp = add(name, func, f"sample a {what} event stream")
        sp.add_argument("--params", required=True, help="parameter file")
        sp.add_argument("--n", type=int, required=True, help="number of events")
        sp.add_argument("--seed", type=int, default=0, help="random seed")
        sp.add_argument("--out", required=True, help="output stream file")
        sp.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="stream file format")
        meta_args(sp)

    sp = add("replay", cmd_replay, "replay a stream through the order book")
    data_args(sp, many=False)
    sp.add_argument("--fills", help="fills CSV output")
    sp.add_argument("--series", help="series CSV output")
    sp.add_argument("--market-price-rule", choices=("algorithm2", "crossing"), default="algorithm2",
                    help="touch price used for market orders")

    sp = add("train", cmd_train, "train the toy model")
    data_args(sp, "--corpus")
    sp.add_argument("--schema", required=True, help="tokenizer schema file")
    sp.add_argument("--out", required=True, help="checkpoint output file")
    sp.add_argument("--loss-curve", help="loss curve CSV output")
    sp.add_argument("--steps", type=int, help="optimizer steps (overrides config)")
    sp.add_argument("--seed", type=int, help="random seed (overrides config)")
    config_args(sp)

    def rollout_args(sp):
        sp.add_argument("--checkpoint", help="trained model checkpoint")
        sp.add_argument("--generator", choices=("zi", "hawkes"), help="baseline generator instead of a model")
        sp.add_argument("--params", help="baseline parameter file")
        sp.add_argument("--schema", required=True, help="tokenizer schema file")
        sp.add_argument("--context", help="stream whose last events form the context")
        sp.add_argument("--context-events", type=int, default=127, help="context length in events")
        sp.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="context stream format")
        sp.add_argument("--n", type=int, default=1, help="number of rollouts")
        sp.add_argument("--horizon", type=int, default=1024, help="events generated per rollout")
        sp.add_argument("--liquidity", type=int, choices=(0, 1, 2), default=1, help="liquidity bin")
        sp.add_argument("--scope", type=int, choices=(0, 1), default=0, help="0 market, 1 participant")
        sp.add_argument("--p0", type=float, help="initial price (default: context opening price or 100)")
        sp.add_argument("--seed", type=int, default=0, help="random seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel rollouts")
        sp.add_argument("--out-dir", required=True, help="output directory")
        config_args(sp)

    rollout_args(add("rollout", cmd_rollout, "closed-loop rollouts"))
    sp = add("inject", cmd_inject, "rollouts with counterfactual order injection")
    rollout_args(sp)
    sp.add_argument("--side", choices=("buy", "sell"), required=True, help="side of the injected orders")
    sp.add_argument("--mult", type=float, default=10.0, help="multiple of the context Add frequency")

    sp = add("controllability", cmd_controllability, "volume and interarrival spread per conditioning pair")
    sp.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    sp.add_argument("--schema", required=True, help="tokenizer schema file")
    sp.add_argument("--n", type=int, default=4, help="trajectories per pair")
    sp.add_argument("--horizon", type=int, default=256, help="events per trajectory")
    sp.add_argument("--p0", type=float, default=100.0, help="initial price")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--out", required=True, help="output CSV")
    config_args(sp)

    sp = add("eval-fidelity", cmd_eval_fidelity, "K-S and Wasserstein distances, real vs generated")
    data_args(sp, "--real")
    data_args(sp, "--generated")
    sp.add_argument("--intervals", type=float, nargs="+", default=list(evaluation.RETURN_INTERVALS),
                    help="return intervals in seconds")
    sp.add_argument("--out", default="-", help="output CSV (default stdout)")

    sp = add("eval-stylized", cmd_eval_stylized, "return autocorrelations and kurtosis")
    data_args(sp, many=False, required=False)
    sp.add_argument("--series", help="series CSV instead of a stream")
    sp.add_argument("--intervals", type=float, nargs="+", default=list(evaluation.RETURN_INTERVALS),
                    help="kurtosis return intervals in seconds")
    sp.add_argument("--max-lag", type=int, default=20, help="largest ACF lag")
    sp.add_argument("--base-interval", type=float, default=1.0, help="ACF return interval in seconds")
    sp.add_argument("--out", default="-", help="ACF CSV output (default stdout)")
    sp.add_argument("--kurtosis-out", help="kurtosis CSV output")

    sp = add("eval-drift", cmd_eval_drift, "feature drift between two periods")
    data_args(sp, "--period-a")
    data_args(sp, "--period-b")
    sp.add_argument("--label-a", default="a", help="label of period a")
    sp.add_argument("--label-b", default="b", help="label of period b")
    sp.add_argument("--out", default="-", help="output CSV (default stdout)")

    sp = add("validate-sim", cmd_validate_sim, "fill CDF self-consistency of the simulator")
    data_args(sp, many=False)
    sp.add_argument("--out", default="-", help="output CSV (default stdout)")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval-stylized" and not (args.data or args.series):
        parser.error("eval-stylized needs --data or --series")
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: UsageError: {exc}\n")
        return 2
    except OrderflowError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc}\n")
        return exc.exit_status
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
