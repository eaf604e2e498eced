"""Command-line interface: ``bayesrank {rank,decide,simulate,diagnose,replay}``.

Exit codes
----------
0  success
2  invalid input or arguments
3  outputs written but the chains did not converge
4  decide only: success, and a lottery is needed
1  internal failure
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from xml.sax.saxutils import escape


from . import __version__
from .data import ValidationError, load_config, load_scores
from .decision import decide, provisional_funding_line, write_decision_csv, write_decision_json
from .diagnostics import (ICC_VARIANTS, assessor_effects, diagnostics_report, icc,
                          read_draw_dump, rhat_table, write_draw_dump)
from .ranking import read_summary, summarize, write_summary
from .sampler import ConvergenceWarning, run_sampler
from .simulation import (METHODS, SimScenario, compare_methods, write_replicate_detail,
                         write_study)

log = logging.getLogger("bayesrank")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_LOTTERY = 4


# ---------------------------------------------------------------- helpers

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, argv: list[str], inputs: list[Path],
                    config: dict, seed: int, outputs: list[Path], started: str,
                    extra: dict | None = None) -> Path:
    doc = {
        "command": command,
        "argv": argv,
        "version": __version__,
        "master_seed": seed,
        "config": config,
        "inputs": [{"path": str(p.resolve()), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return path


def _configs(args):
    over = {
        "outcome": getattr(args, "model", None),
        "residuals": getattr(args, "residuals", None),
        "n_chains": args.chains, "n_iter": args.iters, "n_burnin": args.burnin,
        "n_adapt": args.adapt, "master_seed": args.seed,
        "n_levels": getattr(args, "levels", None),
    }
    if getattr(args, "max_iter", None) is not None:
        over["max_total_iter"] = args.max_iter
    model, prior, mcmc = load_config(args.config, **over)
    return model, prior, mcmc


def _config_dict(*cfgs) -> dict:
    out = {}
    for c in cfgs:
        out.update(dataclasses.asdict(c))
    return out


def _label(p) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(p))


def er_plot_svg(summary, funding_line: float | None = None, title: str = "") -> str:
    """ER points with credible-interval boxes, best first, and a dashed FL."""
    order = summary.order()
    n = summary.n
    row, top, left, width = 14, 30, 90, 420
    height = top + row * n + 40
    scale = width / max(n, 1)

    def x(r):
        return left + (r - 0.5) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 20}" '
        f'height="{height}" font-family="sans-serif" font-size="10">',
        f"<!-- bayesrank {__version__} -->",
        f'<text x="{left}" y="16" font-size="12">{escape(title)}</text>',
    ]
    for pos, i in enumerate(order):
        y = top + pos * row
        lo, hi = summary.cri[i]
        parts.append(f'<text x="{left - 6}" y="{y + 9}" text-anchor="end">'
                     f'{escape(str(summary.proposal_ids[i]))}</text>')
        parts.append(f'<rect x="{x(lo - 0.5):.2f}" y="{y + 2}" '
                     f'width="{(hi - lo + 1) * scale:.2f}" height="{row - 4}" '
                     'fill="#c6dbef" stroke="#3182bd"/>')
        parts.append(f'<circle cx="{x(summary.er[i]):.2f}" cy="{y + row / 2}" r="3" '
                     'fill="#08306b"/>')
    axis_y = top + n * row + 4
    parts.append(f'<line x1="{left}" y1="{axis_y}" x2="{left + width}" y2="{axis_y}" '
                 'stroke="black"/>')
    for r in sorted({1, max(1, (n + 1) // 2), n}):
        parts.append(f'<text x="{x(r):.2f}" y="{axis_y + 14}" text-anchor="middle">{r}</text>')
    parts.append(f'<text x="{left + width / 2}" y="{axis_y + 30}" '
                 'text-anchor="middle">expected rank</text>')
    if funding_line is not None:
        parts.append(f'<line x1="{x(funding_line):.2f}" y1="{top - 4}" '
                     f'x2="{x(funding_line):.2f}" y2="{axis_y}" stroke="#cb181d" '
                     'stroke-dasharray="4,3"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _fit(ds, model, prior, mcmc):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        draws = run_sampler(ds, model, prior, mcmc)
    for w in caught:
        if issubclass(w.category, ConvergenceWarning):
            log.warning("%s", w.message)
    return draws


def _groups(ds, merge: bool):
    """(label, dataset, panel_effect) for each fit."""
    if ds.panel_ids is None:
        return [("all", ds, False)]
    if merge:
        return [("merged", ds, ds.n_panels > 1)]
    return [(p, ds.subset_panel(p), False) for p in ds.panel_ids]


# ---------------------------------------------------------------- commands

def cmd_rank(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    model, prior, mcmc = _configs(args)
    scores = Path(args.scores)
    ds = load_scores(scores, n_levels=model.n_levels, real_scores=args.real_scores)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs, rhat_max, converged = [], {}, True
    groups = _groups(ds, args.merge_panels)
    for label, sub, panel_effect in groups:
        m = dataclasses.replace(model, panel_effect=panel_effect)
        draws = _fit(sub, m, prior, mcmc)
        converged &= draws.converged
        rhat_max[label] = max(draws.rhat.values()) if draws.rhat else None
        s = summarize(draws, args.cri_level, average_score=sub.proposal_means())
        suffix = "" if len(groups) == 1 else f"_{_label(label)}"
        p = out / f"summary{suffix}.csv"
        write_summary(s, p)
        outputs.append(p)
        fl = None
        if args.budget is not None:
            fl = provisional_funding_line(s, min(args.budget, s.n))
        svg = out / f"er_plot{suffix}.svg"
        svg.write_text(er_plot_svg(s, fl, title=f"{label}: expected rank"), encoding="utf-8")
        outputs.append(svg)
        if args.dump_draws:
            d = out / f"draws{suffix}.csv"
            write_draw_dump(draws, d)
            outputs.append(d)
        print(f"{label}: {s.n} proposals, max R-hat {rhat_max[label]}, "
              f"converged={draws.converged}")
    _write_manifest(out, "rank", _argv(args), [scores] + _cfg_input(args),
                    _config_dict(model, prior, mcmc), mcmc.master_seed, outputs, started,
                    {"converged": converged, "max_rhat": rhat_max})
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_decide(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path = Path(args.summary)
    s = read_summary(path)
    if not 1 <= args.budget <= s.n:
        raise ValidationError(f"budget {args.budget} outside 1..{s.n}")
    seed = 0 if args.seed is None else args.seed
    dec = decide(s, args.budget, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "decision.csv", out / "decision.json"
    write_decision_csv(s, dec, csv_path)
    write_decision_json(dec, json_path)
    svg = out / "decision_plot.svg"
    svg.write_text(er_plot_svg(s, dec.funding_line, title="expected rank and funding line"),
                   encoding="utf-8")
    _write_manifest(out, "decide", _argv(args), [path], {"budget": args.budget},
                    seed, [csv_path, json_path, svg], started)
    print(f"funding line {dec.funding_line:.3f}: {len(dec.funded)} funded, "
          f"lottery {len(dec.lottery_group)} for {dec.slots} slots, "
          f"{len(dec.rejected)} rejected")
    return EXIT_LOTTERY if dec.lottery_held else EXIT_OK


def cmd_simulate(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    _, prior, mcmc = _configs(args)
    scen = SimScenario(n_proposals=args.proposals, n_assessors=args.assessors,
                       n_replicates=args.replicates, sigma_scale=args.sigma_scale,
                       noise_as_variance=not args.noise_as_sd)
    methods = args.methods.split(",") if args.methods else None
    table = compare_methods(scen, mcmc, seed=mcmc.master_seed, methods=methods, prior=prior,
                            n_jobs=args.jobs, extend=args.extend)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    study = out / "study.csv"
    write_study(table, study)
    outputs = [study]
    if args.detail:
        d = out / "replicates.csv"
        write_replicate_detail(table, d)
        outputs.append(d)
    for r in table.values():
        print(f"{r.method:24s} {r.mse:8.3f} ({r.mc_se:.3f})  non-converged {r.n_nonconverged}")
    cfg = _config_dict(prior, mcmc)
    cfg.update({"scenario": dataclasses.asdict(scen), "methods": methods or list(METHODS)})
    _write_manifest(out, "simulate", _argv(args), _cfg_input(args), cfg, mcmc.master_seed,
                    outputs, started)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs, sections, status = [], {}, EXIT_OK
    if args.draws:
        p = Path(args.draws)
        inputs.append(p)
        sections["rhats"] = rhat_table(read_draw_dump(p))
    notices, icc_results, warn_lines, assessors = [], {}, [], []
    model = prior = mcmc = None
    if args.scores:
        model, prior, mcmc = _configs(args)
        p = Path(args.scores)
        inputs.append(p)
        ds = load_scores(p, n_levels=model.n_levels, real_scores=args.real_scores)
        for label, sub, panel_effect in _groups(ds, args.merge_panels):
            if sub.n_assessors < 2 or sub.n_proposals < 2:
                notices.append(f"{label}: fewer than 2 assessors or proposals, ICC skipped")
            else:
                try:
                    icc_results[label] = icc(sub, args.icc_variant)
                except ValidationError as e:
                    notices.append(f"{label}: {e}")
            if args.no_fit:
                continue
            m = dataclasses.replace(model, panel_effect=panel_effect)
            draws = _fit(sub, m, prior, mcmc)
            if not draws.converged:
                status = EXIT_NOT_CONVERGED
                warn_lines += [f"{label}: {w}" for w in draws.warnings]
            sections.setdefault("rhats", {}).update(
                {f"{label}:{k}": (v, k in draws.rhat_degenerate) for k, v in draws.rhat.items()})
            for row in assessor_effects(draws):
                row["assessor"] = f"{label}:{row['assessor']}"
                assessors.append(row)
            if draws.tie_count:
                notices.append(f"{label}: {draws.tie_count} draws with tied theta")
    if not inputs:
        raise ValidationError("diagnose needs a scores file and/or --draws")
    text = diagnostics_report(icc_results, sections.get("rhats"), None, warn_lines,
                              assessors, notices)
    rep = out / "diagnostics.txt"
    rep.write_text(text, encoding="utf-8")
    print(text, end="")
    cfg = _config_dict(model, prior, mcmc) if model else {}
    _write_manifest(out, "diagnose", _argv(args), inputs + _cfg_input(args), cfg,
                    args.seed or 0, [rep], started)
    return status


def cmd_replay(args) -> int:
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    argv = list(doc["argv"])
    if args.out_dir:
        i = argv.index("--out-dir")
        argv[i + 1] = args.out_dir
    for rec in doc.get("inputs", []):
        p = Path(rec["path"])
        if p.exists() and _sha256(p) != rec["sha256"]:
            log.warning("input %s changed since the recorded run", p)
    return main(argv)


def _cfg_input(args) -> list[Path]:
    return [Path(args.config)] if getattr(args, "config", None) else []


def _argv(args) -> list[str]:
    """Canonical argument list that reproduces this invocation."""
    return args._argv


# ---------------------------------------------------------------- parser

def _shared(p, fit=True):
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out-dir", default="bayesrank_out")
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int, help="iterations per chain, burn-in included")
    p.add_argument("--burnin", type=int)
    p.add_argument("--adapt", type=int)
    p.add_argument("--max-iter", type=int, help="cap on iterations per chain")
    p.add_argument("--cri-level", type=float, default=0.5)
    if fit:
        p.add_argument("--model", choices=("continuous", "ordinal"))
        p.add_argument("--residuals", choices=("homogeneous", "heterogeneous"))
        p.add_argument("--levels", type=int, help="number of grade levels")
        p.add_argument("--merge-panels", action="store_true",
                       help="fit all panels jointly with a panel effect")
        p.add_argument("--real-scores", action="store_true",
                       help="accept non-integer scores (continuous model only)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesrank",
                                 description="Bayesian ranking of panel-scored proposals")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="fit the model and write rank summaries")
    p.add_argument("scores", help="CSV with proposal,assessor[,panel],score")
    p.add_argument("--budget", type=int, help="draw the provisional funding line")
    p.add_argument("--dump-draws", action="store_true")
    _shared(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("decide", help="funding line, lottery group and draw")
    p.add_argument("summary", help="summary CSV written by `rank`")
    p.add_argument("--budget", type=int, required=True)
    _shared(p, fit=False)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("simulate", help="simulation study comparing ranking methods")
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--proposals", type=int, default=50)
    p.add_argument("--assessors", type=int, default=10)
    p.add_argument("--sigma-scale", type=float, default=1.0,
                   help="multiply every assessor noise level")
    p.add_argument("--noise-as-sd", action="store_true",
                   help="use sigma_j, not sigma_j**2, as the noise SD")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--extend", action="store_true",
                   help="extend non-converged fits instead of counting them")
    p.add_argument("--detail", action="store_true", help="also write per-replicate MSEs")
    _shared(p, fit=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="ICC, R-hat and assessor effects")
    p.add_argument("scores", nargs="?")
    p.add_argument("--draws", help="draw dump from `rank --dump-draws`")
    p.add_argument("--icc-variant", choices=ICC_VARIANTS, default="one-way")
    p.add_argument("--no-fit", action="store_true", help="ICC only")
    _shared(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return ap


def _canonical_argv(argv: list[str]) -> list[str]:
    # make file arguments absolute so the manifest replays from anywhere
    out = argv[:1]
    for a in argv[1:]:
        p = Path(a)
        out.append(str(p.resolve()) if not a.startswith("-") and p.is_file() else a)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._argv = _canonical_argv(argv)
    if args.command != "replay" and "--out-dir" not in argv:
        args._argv += ["--out-dir", str(Path(args.out_dir).resolve())]
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception:  # noqa: BLE001
        log.exception("internal failure")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
