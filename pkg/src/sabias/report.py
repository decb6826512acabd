"""CSV/JSON writers and the markdown summary.

Every CSV has a header row, floats printed with 17 significant digits and a
trailing newline, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import MissingArtifacts


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_moments(path, stats):
    d = stats.means.shape[1]
    p = stats.m2p.shape[1]
    header = ["k", "replica_count"] + [f"mean_{i}" for i in range(d)] + ["m2_frobenius"] + \
        [f"m2p_{j}" for j in range(1, p + 1)]
    rows = []
    for i, k in enumerate(stats.checkpoints):
        rows.append([int(k), stats.replica_count, *stats.means[i],
                     np.linalg.norm(stats.second_moments[i]), *stats.m2p[i]])
    return write_csv(path, header, rows)


def write_bias(out_dir, decomposition, slope_fit=None):
    out_dir = Path(out_dir)
    rows = []
    for name in ("b_m", "b_n", "b_c", "b_total"):
        for i, v in enumerate(getattr(decomposition, name)):
            rows.append([name, i, v])
    if slope_fit is not None:
        for i, v in enumerate(slope_fit.slope):
            rows.append(["mc_slope", i, v])
        for i, v in enumerate(slope_fit.stderr):
            rows.append(["mc_stderr", i, v])
    write_csv(out_dir / "bias.csv", ["component", "coord", "value"], rows)
    (out_dir / "bias.json").write_text(decomposition.to_json() + "\n")


def write_rr(path, rr):
    rows = []
    for r in range(rr.theta_tilde.shape[0]):
        for name, arr in (("pr_alpha", rr.theta_bar_alpha), ("pr_2alpha", rr.theta_bar_2alpha),
                          ("rr", rr.theta_tilde)):
            for i, v in enumerate(arr[r]):
                rows.append([r, name, i, v])
    return write_csv(path, ["replica", "estimator", "coord", "value"], rows)


def write_clt(path, report):
    rows = [[i, report.qq_corr[i], report.cover90[i], report.cover95[i]] for i in range(len(report.qq_corr))]
    return write_csv(path, ["coord", "qq_corr", "cover90", "cover95"], rows)


def write_coupling(path, log):
    rows = [[k, v] for k, v in enumerate(log.mean_sq_diff)]
    return write_csv(path, ["k", "mean_sq_diff"], rows)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(out_dir) -> str:
    """Write ``report.md`` summarising whatever study outputs exist in ``out_dir``."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    studies = [f for f in ("bias.csv", "rr.csv", "coupling.csv", "clt.csv", "moments.csv") if (out / f).exists()]
    if not manifest_path.exists() or not studies:
        raise MissingArtifacts(f"{out} needs manifest.json and at least one study output")
    manifest = json.loads(manifest_path.read_text())
    theta_star = np.asarray(manifest.get("theta_star", []), dtype=float)
    lines = ["# Stochastic approximation bias report", ""]
    lines.append(f"- config sha256: `{manifest.get('config_sha256', '?')}`")
    lines.append(f"- seed: {manifest.get('seed')}, backend: {manifest.get('backend')}")
    lines.append(f"- theta*: {theta_star.tolist()}")
    for w in manifest.get("warnings", []):
        lines.append(f"- WARN: {w}")
    lines.append("")

    if (out / "bias.csv").exists():
        rows = _read_csv(out / "bias.csv")
        table = {}
        for r in rows:
            table.setdefault(r["component"], {})[int(r["coord"])] = float(r["value"])
        lines += ["## Leading bias", "", "| component | " + " | ".join(
            f"coord {i}" for i in sorted(table.get("b_total", {}))) + " |"]
        lines.append("|---" * (1 + len(table.get("b_total", {}))) + "|")
        for name in ("b_m", "b_n", "b_c", "b_total"):
            if name in table:
                lines.append(f"| {name} | " + " | ".join(f"{v:.6g}" for _, v in sorted(table[name].items())) + " |")
        if "mc_slope" in table:
            se = table.get("mc_stderr", {})
            lines.append("| mc_slope | " + " | ".join(
                f"{v:.6g} ± {2 * se.get(i, float('nan')):.3g}" for i, v in sorted(table["mc_slope"].items())) + " |")
        lines.append("")

    if (out / "rr.csv").exists() and theta_star.size:
        rows = _read_csv(out / "rr.csv")
        acc = {}
        for r in rows:
            acc.setdefault(r["estimator"], {}).setdefault(int(r["replica"]), {})[int(r["coord"])] = float(r["value"])
        lines += ["## Tail averaging vs Richardson-Romberg", "", "| estimator | mean - theta* | norm |", "|---|---|---|"]
        norms = {}
        for est in ("pr_alpha", "pr_2alpha", "rr"):
            if est not in acc:
                continue
            arr = np.array([[v for _, v in sorted(rep.items())] for _, rep in sorted(acc[est].items())])
            bias = arr.mean(axis=0) - theta_star
            norms[est] = float(np.linalg.norm(bias))
            lines.append(f"| {est} | {np.array2string(bias, precision=6)} | {norms[est]:.6g} |")
        if "rr" in norms and norms.get("pr_alpha"):
            lines.append(f"| ratio RR/PR | | {norms['rr'] / norms['pr_alpha']:.4g} |")
        lines.append("")

    cp = manifest.get("coupling")
    if cp:
        lines += ["## Coupling contraction", "",
                  f"- fitted rate of mean squared difference: {cp['rho']:.8g}",
                  f"- reference 1 - alpha*mu_hat: {cp['reference']:.8g}",
                  f"- fit window: {cp['fit_range']}", ""]

    if (out / "clt.csv").exists():
        lines += ["## CLT diagnostic", "", "| coord | qq corr | cover 90% | cover 95% |", "|---|---|---|---|"]
        for r in _read_csv(out / "clt.csv"):
            lines.append(f"| {r['coord']} | {float(r['qq_corr']):.4f} | {float(r['cover90']):.3f} | "
                         f"{float(r['cover95']):.3f} |")
        lines.append("")
    text = "\n".join(lines)
    (out / "report.md").write_text(text)
    return text
