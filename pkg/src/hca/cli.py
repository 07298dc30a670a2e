"""Command line experiment runner.

Every subcommand reads the same INI config (``--config``) plus
``--set section.key=value`` overrides, and writes its artifacts under
``<run.output_dir>/<config hash>/``. Reports start with a single
``generated:`` timestamp line; everything after it is a pure function of
the config.
"""

import argparse
import csv
import datetime as _dt
import io
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import MODEL_SECTIONS, ConfigError, load_config
from .data import save_csv
from .distill import teacher_outputs, train_stage2
from .heads import TrainingDiverged, load_checkpoint, save_checkpoint
from .metrics import SHOTS, reports_to_csv, reports_to_markdown

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def run_dir(cfg, sections=None):
    d = Path(cfg["run"]["output_dir"]) / cfg.digest(sections)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_report(path, title, body, cfg):
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = (f"generated: {stamp}\n"
            f"# {title}\n\n{body}\n## Resolved config\n\n```ini\n{cfg.to_text()}```\n")
    Path(path).write_text(text)
    return path


def report_body(path):
    """Report text minus its timestamp header line."""
    return Path(path).read_text().split("\n", 1)[1]


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def _pm(mean, std):
    return f"{mean:.4f} ± {std:.4f}"


def _hier_notes(hier):
    lines = [f"- hierarchy classes per level: {hier.class_counts}"]
    lines += [f"- {n}" for n in hier.notes]
    return "\n".join(lines) + "\n"


def cmd_print_config(cfg, args):
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


def cmd_gen(cfg, args):
    ds = ex.make_dataset(cfg, cfg["run"]["seed"])
    path = run_dir(cfg) / "dataset.csv"
    save_csv(ds, path)
    print(path)
    return EXIT_OK


def _train_data(cfg):
    ds = ex.make_dataset(cfg, cfg["run"]["seed"])
    train = ds.part("train")
    if train[1].size == 0:
        raise ConfigError("dataset has no train split")
    return ds, train


def cmd_train(cfg, args):
    ds, train = _train_data(cfg)
    hier = ex.build_quantization(cfg, train[1])
    val = ds.part("val")
    tcfg = ex.train_config(cfg, train[1].size, cfg["run"]["seed"])
    pipe = ex.fit_pipeline(cfg, train, hier, cfg["run"]["seed"], ["CLS"],
                           val=val if val[1].size else None, train_cfg=tcfg)
    out = run_dir(cfg, MODEL_SECTIONS)
    save_checkpoint(out / "checkpoint.json", hier, pipe.heads, config=tcfg)
    log = pipe.logs["stage1"]
    rows = [{"epoch": i, "loss": l} for i, l in enumerate(log["loss"])]
    for row, acc in zip(rows, log["val_accuracy"]):
        row.update({f"val_acc_h{h}": a for h, a in enumerate(acc, start=1)})
    _write_csv(out / "train_log.csv", rows)
    print(out / "checkpoint.json")
    return EXIT_OK


def _checkpoint(cfg):
    path = run_dir(cfg, MODEL_SECTIONS) / "checkpoint.json"
    if not path.exists():
        raise ConfigError(f"missing checkpoint {path}; run `hca train` with the same config first")
    return path, load_checkpoint(path)


def cmd_distill(cfg, args):
    path, (hier, heads, distilled) = _checkpoint(cfg)
    _, (F, y) = _train_data(cfg)
    tcfg = ex.train_config(cfg, y.size, cfg["run"]["seed"])
    d = cfg["distill"]
    head, log = train_stage2(teacher_outputs(heads, F), F, hier, tcfg, args.alignment,
                             stage1_epochs=tcfg.epochs, fraction=d["fraction"],
                             early_stop=(d["early_stop_window"], d["early_stop_tol"]),
                             hidden=d["hidden"] or None)
    keep = [h for h in distilled if getattr(h, "tag", None) != head.tag]
    save_checkpoint(path, hier, heads, stage2=keep + [head], config=tcfg)
    _write_csv(path.parent / f"distill_{args.alignment}_log.csv",
               [{"epoch": i, "loss": l} for i, l in enumerate(log["loss"])])
    print(path)
    return EXIT_OK


def cmd_eval(cfg, args):
    method = cfg["eval"]["method"]
    ex.parse_methods(method)
    path, (hier, heads, distilled) = _checkpoint(cfg)
    pipe = ex.Pipeline(hier, heads, hier.finest.counts.copy())
    for h in distilled:
        pipe.distilled[h.tag.rsplit("-", 1)[-1]] = h
    need = {"HCA-d": "max", "HCA-sum": "sum"}
    if method in need and need[method] not in pipe.distilled:
        raise ConfigError(f"{method} needs `hca distill --alignment {need[method]}` first")
    if method in ("Same-CLSs", "CLS+GT-sup"):
        raise ConfigError(f"{method} is only available through `hca compare`")
    ds = ex.make_dataset(cfg, cfg["run"]["seed"])
    rep = ex.evaluate_methods(cfg, pipe, ds.part("test"), [method])
    out = path.parent
    write_report(out / f"eval_{method}.md", f"eval {method}",
                 reports_to_markdown(rep) + "\n" + _hier_notes(hier), cfg)
    (out / f"eval_{method}.csv").write_text(reports_to_csv(rep))
    print(out / f"eval_{method}.md")
    return EXIT_OK


def compare_markdown(runs):
    agg_b, agg_m = ex.aggregate(runs, "bmae"), ex.aggregate(runs, "mae")
    head = ["Method"] + [f"bMAE {s}" for s in SHOTS] + [f"MAE {s}" for s in SHOTS]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in agg_b:
        cells = [m] + [_pm(*agg_b[m][s]) for s in SHOTS] + [_pm(*agg_m[m][s]) for s in SHOTS]
        lines.append("| " + " | ".join(c.replace("nan ± nan", "n/a") for c in cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_compare(cfg, args):
    runs = ex.run_compare(cfg)
    body = (f"Mean ± std over {len(runs)} seed(s).\n\n" + compare_markdown(runs) + "\n"
            + _hier_notes(runs[0]["hierarchy"]))
    out = run_dir(cfg)
    path = write_report(out / "compare.md", "compare", body, cfg)
    lines = []
    for run in runs:
        rows = reports_to_csv(run["reports"]).splitlines()
        if not lines:
            lines.append("seed," + rows[0])
        lines += [f"{run['seed']},{r}" for r in rows[1:]]
    (out / "compare.csv").write_text("\n".join(lines) + "\n")
    print(path)
    return EXIT_OK


def cmd_analyze(cfg, args):
    seed = cfg["run"]["seed"]
    ds = ex.make_dataset(cfg, seed)
    train, test = ds.part("train"), ds.part("test")
    hier = ex.build_quantization(cfg, train[1])
    pipe = ex.fit_pipeline(cfg, train, hier, seed, ["CLS", "HCA-d", "HCA-sum"])
    out = run_dir(cfg)
    levels = ex.analyze_levels(pipe, test)
    incons = ex.analyze_inconsistency(pipe, test)
    a = cfg["analyze"]
    _, rates, peaks = ex.dirichlet_inconsistency(a["mc_classes"], a["mc_samples"], seed, "sum")
    _, mrates, _ = ex.dirichlet_inconsistency(a["mc_classes"], a["mc_samples"], seed, "max")
    mc = [{"level": h, "n_classes": 2 ** h, "sum_rate": float(r), "max_rate": float(m),
           "mean_max_prob": float(p)} for h, (r, m, p) in enumerate(zip(rates, mrates, peaks), start=1)]
    _write_csv(out / "analyze_levels.csv", levels)
    _write_csv(out / "analyze_inconsistency.csv", incons)
    _write_csv(out / "analyze_dirichlet.csv", mc)
    body = ["| level | classes | quant. error | individual bMAE | coarse-to-fine bMAE |",
            "|---|---|---|---|---|"]
    body += [f"| {r['level']} | {r['n_classes']} | {r['quantization_error']:.4f} | "
             f"{r['individual_bmae']:.4f} | {r['coarse_to_fine_bmae']:.4f} |" for r in levels]
    body += ["", "| source | level | sum-pool inconsistency | max-pool inconsistency |", "|---|---|---|---|"]
    body += [f"| {r['source']} | {r['level']} | {r['sum_rate']:.4f} | {r['max_rate']:.4f} |" for r in incons]
    body += ["", "Dirichlet(1) per-head Monte Carlo:", "",
             "| level | classes | sum-pool inconsistency | max-pool inconsistency | mean max prob |",
             "|---|---|---|---|---|"]
    body += [f"| {r['level']} | {r['n_classes']} | {r['sum_rate']:.4f} | {r['max_rate']:.4f} | "
             f"{r['mean_max_prob']:.4f} |" for r in mc]
    path = write_report(out / "analyze.md", "analyze", "\n".join(body) + "\n\n" + _hier_notes(hier), cfg)
    print(path)
    return EXIT_OK


def table5_markdown(results, methods):
    cells = list(results)
    lines = ["| Method | " + " | ".join(cells) + " |", "|" + "---|" * (len(cells) + 1)]
    for m in methods:
        vals = [np.array([r[m] for r in results[c]]) for c in cells]
        lines.append(f"| {m} | " + " | ".join(_pm(v.mean(), v.std()) for v in vals) + " |")
    return "\n".join(lines) + "\n"


def cmd_table5(cfg, args):
    methods = ex.parse_methods(cfg["table5"]["methods"])
    results = ex.run_table5(cfg, methods=methods)
    out = run_dir(cfg)
    n = len(next(iter(results.values())))
    body = f"Overall bMAE, mean ± std over {n} seed(s).\n\n" + table5_markdown(results, methods)
    path = write_report(out / "table5.md", "table5", body, cfg)
    rows = [{"cell": c, "seed": i, **{m: r[m] for m in methods}}
            for c, rs in results.items() for i, r in enumerate(rs)]
    _write_csv(out / "table5.csv", rows)
    print(path)
    return EXIT_OK


COMMANDS = {
    "print-config": cmd_print_config,
    "gen": cmd_gen,
    "train": cmd_train,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
    "table5": cmd_table5,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hca", description="Hierarchical classification adjustment experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="INI config file (defaults if omitted)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name == "distill":
            sp.add_argument("--alignment", choices=("max", "sum"), default="max")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
