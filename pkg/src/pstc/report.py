"""
Post-run reports: a gnuplot script for the state-norm / inter-event panels
and a markdown comparison of PSTC against PETC.
"""

from pathlib import Path
from typing import Dict, List

from .data import trace_columns


def _col(columns: List[str], name: str) -> int:
    # gnuplot columns are 1-based
    return columns.index(name) + 1


def gnuplot_script(csv_files: Dict[str, Path], dims: Dict[str, int], png: Path) -> str:
    """Two stacked panels: |xi(t)| on a log scale and kappa at sampling instants."""
    columns = trace_columns(dims)
    norm = "+".join(f"${_col(columns, f'xi_p_{i + 1}')}**2" for i in range(dims["n_x"]))
    t = _col(columns, "t")
    trig = _col(columns, "trigger")
    kappa = _col(columns, "kappa")
    petc = _col(columns, "petc_kappa")

    lines = [
        "# generated by pstc; run with: gnuplot <this file>\n",
        "set datafile separator ','\n",
        "set terminal pngcairo size 900,700\n",
        f"set output '{png}'\n",
        "set multiplot layout 2,1\n",
        "set logscale y\n",
        "set ylabel '|xi(t)|'\n",
        "plot \\\n",
    ]
    curves = [
        f"  '{path}' every ::1 using {t}:(sqrt({norm})) with lines title '{label}'"
        for label, path in csv_files.items()
    ]
    lines.append(", \\\n".join(curves) + "\n")
    lines += [
        "unset logscale y\n",
        "set xlabel 't'\n",
        "set ylabel 'kappa'\n",
        "plot \\\n",
    ]
    points = []
    for label, path in csv_files.items():
        points.append(
            f"  '{path}' every ::1 using {t}:(${trig} > 0 ? ${kappa} : 1/0) "
            f"with points pt 7 ps 0.4 title '{label}'"
        )
        if label.startswith("pstc"):
            points.append(
                f"  '{path}' every ::1 using {t}:(${trig} > 0 && ${petc} > 0 ? ${petc} : 1/0) "
                f"with points pt 6 ps 0.4 title '{label} (PETC at PSTC instants)'"
            )
    lines.append(", \\\n".join(points) + "\n")
    lines.append("unset multiplot\n")
    return "".join(lines)


def _fmt(value, spec: str = ".3g") -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, float)):
        return format(value, spec)
    return str(value)


def comparison_markdown(title: str, summaries: Dict[str, dict], windows: Dict[str, dict]) -> str:
    """Markdown report; ``windows`` maps a label to per-mode window_stats results."""
    lines = [f"# {title}\n"]
    lines.append("\n## Runs\n\n")
    lines.append("| run | triggers | mean kappa | min kappa | final norm | decay rate | diverged |\n")
    lines.append("|---|---|---|---|---|---|---|\n")
    for label, s in summaries.items():
        lines.append(
            f"| {label} | {s['triggers']} | {_fmt(s['kappa_mean'])} | {_fmt(s['kappa_min'])} "
            f"| {_fmt(s['final_state_norm'])} | {_fmt(s['decay_rate'])} | {_fmt(s['diverged'])} |\n"
        )

    if windows:
        lines.append("\n## Inter-event times by window\n\n")
        lines.append("| window | run | samples | mean kappa | median kappa |\n")
        lines.append("|---|---|---|---|---|\n")
        for window, per_run in windows.items():
            for label, w in per_run.items():
                lines.append(
                    f"| {window} | {label} | {w['count']} | {_fmt(w['mean'])} | {_fmt(w['median'])} |\n"
                )

    lines.append("\n## Guarantees\n\n")
    for label, s in summaries.items():
        if s["mode"] != "pstc":
            continue
        lines.append(
            f"- {label}: {s['lower_bound_violations']} sampling instants where PSTC waited "
            f"longer than PETC would have; {s['containment_failures']} periods with the true "
            f"state outside the estimate; {s['model_violations']} inconsistent measurements.\n"
        )

    timing = {label: s["timing"] for label, s in summaries.items() if s["mode"] == "pstc"}
    if timing:
        lines.append("\n## On-line CPU time per sampling instant (ms)\n\n")
        lines.append("| run | phase | mean | max |\n")
        lines.append("|---|---|---|---|\n")
        for label, phases in timing.items():
            for phase in ("fusion", "eta_bar", "prediction"):
                p = phases.get(phase, {})
                lines.append(
                    f"| {label} | {phase} | {_fmt(p.get('mean_ms'), '.4f')} | {_fmt(p.get('max_ms'), '.4f')} |\n"
                )
    return "".join(lines)


def write_text(content: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(content)
    return path
