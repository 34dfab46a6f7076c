"""Operator entry points: live proxies, trace replay, lower-bound curves,
and closed-world evaluation reports.

Every output file embeds the resolved configuration and seed as comment
lines; re-running with the same inputs reproduces the file byte-for-byte
apart from the generated-at timestamp line.  Exit codes: 0 ok, 1 completed
with warnings under --strict, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import datetime
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

from .bounds import Infeasible, SiteSizes, min_cost_uniform, tradeoff_curve
from .core import BufloConfig, DefenseConfig, PaddingMode, Trace, trace_total_bytes
from .evaluation import (
    ClosedWorldDataset,
    SiteRecord,
    bandwidth_ratio,
    closed_world_success,
    closeness_to_bound,
    dataset_site_sizes,
    latency_ratio,
)
from .simulator import AppSchedule, SimStats, simulate_buflo, simulate_csbuflo
from .traceio import TraceParseError, read_trace_file, write_trace

EXIT_OK = 0
EXIT_WARNINGS = 1
EXIT_INPUT = 2

_PADDING_NAMES = {"payload": PaddingMode.PAYLOAD, "total": PaddingMode.TOTAL}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(flag_value, file_values: dict[str, str], key: str, default,
             convert):
    """Precedence: explicit flag > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in file_values:
        try:
            return convert(file_values[key])
        except (ValueError, KeyError) as exc:
            raise CliError(f"config key {key}: {exc}")
    return default


def _parse_padding(text: str) -> PaddingMode:
    try:
        return _PADDING_NAMES[text.lower()]
    except KeyError:
        raise ValueError(f"padding mode must be payload or total, got {text!r}")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _add_defense_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--packet-size", type=int, default=None)
    parser.add_argument("--quiet-time", type=int, default=None,
                        help="idle window in ms before the site is presumed done")
    parser.add_argument("--initial-rho", type=int, default=None,
                        help="starting send interval in ms (power of two)")
    parser.add_argument("--client-padding", type=_parse_padding, default=None,
                        metavar="payload|total")
    parser.add_argument("--server-padding", type=_parse_padding, default=None,
                        metavar="payload|total")
    parser.add_argument("--early-termination", type=_parse_bool, default=None,
                        metavar="on|off")
    parser.add_argument("--junk-reclaim", type=_parse_bool, default=None,
                        metavar="on|off")


def _defense_config(args) -> DefenseConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    defaults = DefenseConfig()
    try:
        return DefenseConfig(
            packet_size_bytes=_resolve(args.packet_size, file_values,
                                       "packet_size", defaults.packet_size_bytes, int),
            quiet_time_ms=_resolve(args.quiet_time, file_values,
                                   "quiet_time", defaults.quiet_time_ms, int),
            initial_rho_ms=_resolve(args.initial_rho, file_values,
                                    "initial_rho", defaults.initial_rho_ms, int),
            client_padding=_resolve(args.client_padding, file_values,
                                    "client_padding", defaults.client_padding,
                                    _parse_padding),
            server_padding=_resolve(args.server_padding, file_values,
                                    "server_padding", defaults.server_padding,
                                    _parse_padding),
            early_termination=_resolve(args.early_termination, file_values,
                                       "early_termination",
                                       defaults.early_termination, _parse_bool),
            junk_reclaim=_resolve(args.junk_reclaim, file_values,
                                  "junk_reclaim", defaults.junk_reclaim,
                                  _parse_bool),
        )
    except ValueError as exc:
        raise CliError(str(exc))


def _config_comment(cfg: DefenseConfig) -> str:
    parts = [
        f"packet_size={cfg.packet_size_bytes}",
        f"quiet_time={cfg.quiet_time_ms}",
        f"initial_rho={cfg.initial_rho_ms}",
        f"client_padding={cfg.client_padding.value}",
        f"server_padding={cfg.server_padding.value}",
        f"early_termination={'on' if cfg.early_termination else 'off'}",
        f"junk_reclaim={'on' if cfg.junk_reclaim else 'off'}",
    ]
    return " ".join(parts)


def _header_lines(tool: str, config: str, seed=None) -> list[str]:
    lines = [
        f"tool: csbuflo {tool}",
        f"generated-at: {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
        f"config: {config}",
    ]
    if seed is not None:
        lines.append(f"seed: {seed}")
    return lines


def _write_text(path: str, header: list[str], body: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(body)


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise CliError(f"endpoint must be HOST:PORT, got {text!r}")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise CliError(f"bad port in endpoint {text!r}")


def _fraction6(value) -> str:
    return f"{float(value):.6f}"


# --- subcommands --------------------------------------------------------------


def cmd_serve(args) -> int:
    from . import wire

    cfg = _defense_config(args)
    host, port = _parse_endpoint(args.listen)
    try:
        wire.run_server_proxy(host, port, cfg, capture_path=args.capture)
    except OSError as exc:
        raise CliError(f"cannot bind {args.listen}: {exc}")
    return EXIT_OK


def cmd_client(args) -> int:
    from . import wire

    if args.notify_onload:
        if not args.socks:
            raise CliError("--notify-onload requires --socks HOST:PORT")
        host, port = _parse_endpoint(args.socks)
        if not wire.send_onload_command(host, port):
            raise CliError(f"client proxy at {args.socks} did not acknowledge")
        return EXIT_OK
    if not args.listen or not args.server:
        raise CliError("client proxy requires --listen and --server")
    cfg = _defense_config(args)
    listen_host, listen_port = _parse_endpoint(args.listen)
    server_host, server_port = _parse_endpoint(args.server)
    try:
        wire.run_client_proxy(listen_host, listen_port, server_host,
                              server_port, cfg, capture_path=args.capture)
    except OSError as exc:
        raise CliError(f"cannot start client proxy: {exc}")
    return EXIT_OK


def _stats_block(stats: SimStats) -> str:
    return "".join(f"{key}={value}\n" for key, value in stats.flat_items())


def cmd_simulate(args) -> int:
    try:
        input_trace = read_trace_file(args.input)
    except OSError as exc:
        raise CliError(f"cannot read schedule: {exc}")
    except TraceParseError as exc:
        raise CliError(f"schedule {args.input}: {exc}")
    sched = AppSchedule.from_trace(input_trace, onload_time_ms=args.onload_ms)

    if args.defense == "csbuflo":
        cfg = _defense_config(args)
        try:
            defended, stats = simulate_csbuflo(sched, cfg, seed=args.seed)
        except ValueError as exc:
            raise CliError(str(exc))
        config_comment = _config_comment(cfg)
        stats_text = _stats_block(stats)
    elif args.defense == "buflo":
        try:
            bcfg = BufloConfig(tau_ms=args.tau, rho_ms=args.rho,
                               d_bytes=args.d)
            defended = simulate_buflo(sched, bcfg)
        except ValueError as exc:
            raise CliError(str(exc))
        config_comment = f"tau={args.tau} rho={args.rho} d={args.d}"
        stats_text = f"packets={len(defended)}\nbytes={trace_total_bytes(defended)}\n"
    else:  # identity defense
        defended = input_trace
        config_comment = "defense=none"
        stats_text = f"packets={len(defended)}\nbytes={trace_total_bytes(defended)}\n"

    header = _header_lines(f"simulate --defense {args.defense}",
                           config_comment, seed=args.seed)
    _write_text(args.output, header, write_trace(defended))
    if args.stats:
        _write_text(args.stats, header, stats_text)
    return EXIT_OK


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise CliError(f"expected a comma-separated integer list, got {text!r}")


def _parse_fraction_list(text: str) -> list[Fraction]:
    try:
        return [Fraction(part.strip()) for part in text.split(",")
                if part.strip()]
    except (ValueError, ZeroDivisionError):
        raise CliError(f"expected a comma-separated fraction list, got {text!r}")


def _read_sizes_file(path: str) -> SiteSizes:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read sizes file: {exc}")
    sizes = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            sizes.append(int(line))
        except ValueError:
            raise CliError(f"{path}:{line_no}: expected one integer per line")
    try:
        return SiteSizes(tuple(sizes))
    except ValueError as exc:
        raise CliError(f"{path}: {exc}")


def cmd_bounds(args) -> int:
    sizes = _read_sizes_file(args.sizes)
    n = len(sizes)
    rows = ["epsilon,ratio\n"]
    if args.uniform:
        epsilons = (_parse_fraction_list(args.epsilons) if args.epsilons
                    else [Fraction(1, m) for m in range(n, 0, -1)])
        for eps in epsilons:
            result = min_cost_uniform(sizes, eps)
            if isinstance(result, Infeasible):
                rows.append(f"{_fraction6(eps)},inf\n")
            else:
                cost, _ = result
                rows.append(
                    f"{_fraction6(eps)},{_fraction6(Fraction(cost, sizes.total))}\n")
        config = f"mode=uniform n={n}"
    else:
        ks = _parse_int_list(args.ks) if args.ks else list(range(1, n + 1))
        bad = [k for k in ks if not 1 <= k <= n]
        if bad:
            raise CliError(f"k values out of range [1, {n}]: {bad}")
        for eps, ratio in tradeoff_curve(sizes, ks):
            rows.append(f"{_fraction6(eps)},{_fraction6(ratio)}\n")
        config = f"mode=nonuniform n={n}"
    header = _header_lines("bounds", config)
    _write_text(args.output, header, "".join(rows))
    return EXIT_OK


def _load_site_dir(site_dir: Path):
    """Returns (SiteRecord, None) or (None, warning)."""
    defended: list[Trace] = []
    undefended: list[Trace] = []
    for path in sorted(site_dir.glob("run-*.defended.trace")):
        defended.append(read_trace_file(path))
    for path in sorted(site_dir.glob("run-*.undefended.trace")):
        undefended.append(read_trace_file(path))
    if not defended or not undefended:
        return None, f"skipping incomplete site {site_dir.name}"
    return SiteRecord(site_dir.name, undefended, defended), None


def _load_dataset_dir(root: Path, jobs: int = 1) -> tuple[list[SiteRecord], list[str]]:
    site_dirs = sorted(p for p in root.iterdir()
                       if p.is_dir() and p.name.startswith("site-"))
    if jobs > 1 and len(site_dirs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loaded = list(pool.map(_load_site_dir, site_dirs))
    else:
        loaded = [_load_site_dir(d) for d in site_dirs]
    # pool.map preserves input order, so output is stable regardless of jobs
    sites = [record for record, _ in loaded if record is not None]
    warnings = [warning for _, warning in loaded if warning is not None]
    return sites, warnings


def cmd_evaluate(args) -> int:
    root = Path(args.dataset)
    if not root.is_dir():
        raise CliError(f"dataset directory not found: {args.dataset}")
    try:
        sites, warnings = _load_dataset_dir(root, jobs=args.jobs)
    except TraceParseError as exc:
        raise CliError(f"dataset {args.dataset}: {exc}")
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if len(sites) < 2:
        raise CliError("dataset holds fewer than 2 complete sites")
    dataset = ClosedWorldDataset(sites)

    epsilon = closed_world_success(dataset, folds=args.folds, seed=args.seed)
    bw = bandwidth_ratio(dataset)
    latency = latency_ratio(dataset)
    sizes = dataset_site_sizes(dataset)
    closeness = closeness_to_bound(epsilon, bw, sizes)
    bound = bw / closeness

    header = _header_lines(
        "evaluate", f"dataset={args.dataset} folds={args.folds}",
        seed=args.seed)
    body = ("defense,n,epsilon,bw_ratio,latency_ratio,lower_bound_ratio,closeness\n"
            f"{args.defense_name},{dataset.n},{_fraction6(epsilon)},"
            f"{_fraction6(bw)},{_fraction6(latency)},{_fraction6(bound)},"
            f"{_fraction6(closeness)}\n")
    _write_text(args.output, header, body)
    if warnings and args.strict:
        return EXIT_WARNINGS
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csbuflo",
        description="padding tunnel lab: proxies, replay, bounds, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the server-side proxy")
    p_serve.add_argument("--listen", required=True, metavar="HOST:PORT")
    p_serve.add_argument("--capture", help="write observable packets here")
    _add_defense_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_client = sub.add_parser("client", help="run the client-side proxy")
    p_client.add_argument("--listen", metavar="HOST:PORT")
    p_client.add_argument("--server", metavar="HOST:PORT")
    p_client.add_argument("--capture", help="write observable packets here")
    p_client.add_argument("--notify-onload", action="store_true",
                          help="signal a page load to a running client proxy")
    p_client.add_argument("--socks", metavar="HOST:PORT",
                          help="client proxy SOCKS endpoint for --notify-onload")
    _add_defense_flags(p_client)
    p_client.set_defaults(func=cmd_client)

    p_sim = sub.add_parser("simulate", help="replay a schedule through a defense")
    p_sim.add_argument("--defense", choices=("csbuflo", "buflo", "none"),
                       default="csbuflo")
    p_sim.add_argument("--in", dest="input", required=True,
                       help="undefended schedule in trace format")
    p_sim.add_argument("--out", dest="output", required=True)
    p_sim.add_argument("--stats", help="write the stats block here")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--onload-ms", type=int, default=None)
    p_sim.add_argument("--tau", type=int, default=0, help="baseline tau in ms")
    p_sim.add_argument("--rho", type=int, default=10, help="baseline rho in ms")
    p_sim.add_argument("--d", type=int, default=1000,
                       help="baseline packet size in bytes")
    _add_defense_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_bounds = sub.add_parser("bounds", help="bandwidth lower-bound curve")
    p_bounds.add_argument("--sizes", required=True,
                          help="one site size per line")
    p_bounds.add_argument("--out", dest="output", required=True)
    p_bounds.add_argument("--ks", help="comma-separated group counts")
    p_bounds.add_argument("--uniform", action="store_true",
                          help="per-site security constraint instead")
    p_bounds.add_argument("--epsilons",
                          help="comma-separated epsilons for --uniform")
    p_bounds.set_defaults(func=cmd_bounds)

    p_eval = sub.add_parser("evaluate", help="closed-world report")
    p_eval.add_argument("--dataset", required=True,
                        help="directory of site-*/run-*.trace files")
    p_eval.add_argument("--out", dest="output", required=True)
    p_eval.add_argument("--folds", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--strict", action="store_true",
                        help="exit 1 when sites were skipped")
    p_eval.add_argument("--defense-name", default="csbuflo")
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
