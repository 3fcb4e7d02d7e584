import os
import time
import logging
import threading
from dataclasses import replace

import numpy as np
from rich.box import ROUNDED
from rich.console import Console
from rich.live import Live
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from config import DEFAULT_CV_FOLDS, resolve_workers
from .base import (
    InvalidArgumentError, NumericalError, TransportLassoError, ensure_output_dir, spawn_seeds,
    write_diagnostic_dump,
)
from .data_tools import (
    load_dataset, load_map_json, save_map_json, write_json, write_jsonl, write_samples, write_table,
)
from .em_lambda import EmConfig, run_em, run_gibbs_em
from .gibbs_baseline import run_gibbs
from .posterior_analysis import (
    SweepConfig, compare_samplers, cross_validate_lambda, gibbs_lambda_pc, lambda_from_pc, lambda_sweep_path,
    push_samples, summarize, with_optimal_lambda,
)
from .prior_pce import LaplacianPrior, build_multi_index_set, sample_laplacian
from .transport_admm import (
    AdmmConfig, LassoObjectiveG, check_monotonicity, continuity_gaps, jacobian_equation_residual, run_admm,
)
from .web_tools import DIABETES_URL, download_diabetes

console = Console()
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_INVALID = 0, 1, 2


# ============================================================================
#  STATUS PANEL
# ============================================================================

def _build_status_panel(command, spinner_char=None, is_complete=False, failed=False):
    """Build a rich Panel for command status display."""
    tbl = Table(show_header=False, show_edge=False, box=None, padding=(0, 1), expand=True)
    tbl.add_column("left", ratio=1)
    tbl.add_column("right", justify="right", width=12)
    if is_complete:
        status = "[bold red]failed[/bold red]" if failed else "[bold green]complete[/bold green]"
        border = "red" if failed else "blue"
    else:
        status = f"[bold yellow]{spinner_char}[/bold yellow]"
        border = "green"
    tbl.add_row(Text.from_markup(f"[bold cyan]{command}[/bold cyan]"), Text.from_markup(status))
    return Panel(tbl, border_style=border, box=ROUNDED, title="[bold]Run[/bold]", title_align="left")


def _run_spinner_animation(command, stop_event, live_obj):
    """Animation thread: only shows spinning frames, stops when event is set."""
    spinner_frames = ["─", "╲", "│", "╱"]
    idx = 0
    while not stop_event.is_set():
        live_obj.update(_build_status_panel(command, spinner_char=spinner_frames[idx % len(spinner_frames)]))
        idx += 1
        time.sleep(0.15)


# ============================================================================
#  SHARED PLUMBING
# ============================================================================

def _out_path(config, name, table=False):
    ext = config.format if table else name.rsplit(".", 1)[-1]
    stem = name.rsplit(".", 1)[0] if "." in name else name
    return os.path.join(config.out, f"{stem}.{ext}")


def _collect(files, result):
    if "error" in result:
        raise TransportLassoError(f"could not write output: {result['error']}")
    files.append(result["file_path"])
    logger.info("wrote %s", result["file_path"])


def _load_problem(config):
    dataset = load_dataset(config.data, config.response)
    g = LassoObjectiveG(dataset.design, dataset.response, config.lam, config.sigma2)
    return dataset, g


def _admm_config(config, workers=None):
    return AdmmConfig(
        rho=config.rho, max_iter=config.max_iter, tol_b=config.tol, tol_res=config.tol_res,
        init_mode=config.init_mode, init_seed=config.seed,
        workers=workers or resolve_workers(config.workers), solver=config.solver,
        balance_residuals=config.balance_residuals,
    )


def _sweep_config(config):
    return SweepConfig(
        admm=_admm_config(config), order=config.order, n_train=config.n_train, n_samples=config.n_samples,
        sigma2=config.sigma2, seed=config.seed, gibbs_iters=config.gibbs_iters,
        gibbs_burn_in=config.gibbs_burn_in, gibbs_fix_sigma2=config.fix_sigma2, level=config.level,
        workers=resolve_workers(config.workers), solver=config.solver,
    )


def _index_label(idx):
    return "*".join(f"{'s' if p else ''}L{deg}" for deg, p in zip(idx.degrees, idx.parities))


def _summary_rows(names, summary):
    return [[name, summary.medians[j], summary.ci_low[j], summary.ci_high[j]] for j, name in enumerate(names)]


def _fit_map(config, dataset, g, workers=None, callback=None):
    basis = build_multi_index_set(g.dim, config.order, rate=g.tau)
    train = sample_laplacian(LaplacianPrior(g.dim, g.tau), config.n_train, config.seed)
    tmap = run_admm(g, train, basis, _admm_config(config, workers), callback=callback)
    tmap.metadata["column_names"] = dataset.column_names
    tmap.metadata["standardization"] = dataset.standardization.to_dict()
    return tmap


# ============================================================================
#  SUBCOMMANDS
# ============================================================================

def run_fit(config):
    dataset, g = _load_problem(config)
    tmap = _fit_map(config, dataset, g)
    ensure_output_dir(config.out)
    files = []
    _collect(files, save_map_json(tmap, _out_path(config, "map.json")))
    _collect(files, write_jsonl(_out_path(config, "residuals.jsonl"), tmap.residual_history))
    header = ["coordinate"] + [_index_label(i) for i in tmap.basis.indices]
    rows = [[name] + list(row) for name, row in zip(dataset.column_names, tmap.coeffs)]
    _collect(files, write_table(_out_path(config, "coefficients", table=True), header, rows, config.format))

    diag_seed = spawn_seeds(config.seed, 1)[0]
    held_out = sample_laplacian(LaplacianPrior(g.dim, g.tau), 1000, diag_seed)
    residual = jacobian_equation_residual(tmap, g, held_out)
    summary = {
        "lambda": g.lam,
        "tau": g.tau,
        "sigma2": g.sigma2,
        "converged": tmap.converged,
        "iterations": tmap.iterations,
        "basis_size": tmap.basis.size,
        "final_objective": tmap.residual_history[-1]["objective"] if tmap.residual_history else None,
        "initial_objective": tmap.metadata["initial_objective"],
        "monotone_fraction": check_monotonicity(tmap, n=1000, seed=diag_seed),
        "min_continuity_gap": float(continuity_gaps(tmap, held_out).min()),
        "jacobian_residual_sd": residual.dispersion() if residual.valid.any() else None,
    }
    _collect(files, write_json(_out_path(config, "fit_summary.json"), summary))
    return {"success": True, "files": files, "summary": summary}


def run_sample(config):
    tmap = load_map_json(config.map_path)
    samples = push_samples(tmap, config.n_samples, config.seed)
    names = tmap.metadata.get("column_names") or [f"x{j + 1}" for j in range(tmap.dim)]
    files = []
    _collect(files, write_samples(_out_path(config, "samples", table=True), samples, names, config.format))
    post = summarize(samples, tmap.lam, config.level, "transport")
    _collect(files, write_table(_out_path(config, "sample_summary", table=True),
                                ["coordinate", "median", "ci_low", "ci_high"], _summary_rows(names, post),
                                config.format))
    return {"success": True, "files": files, "summary": {"n_samples": post.n_samples, "lambda": tmap.lam}}


def run_em_command(config):
    dataset, g = _load_problem(config)
    basis = build_multi_index_set(g.dim, config.order, rate=g.tau)
    em_cfg = EmConfig(lambda_init=config.lam, n_samples=config.n_train, rel_tol=config.em_rel_tol,
                      max_iter=config.em_max_iter, seed=config.seed)
    trace = run_em(g, basis, _admm_config(config), em_cfg)
    records = trace.records()
    files = []
    header = ["iteration", "lambda", "next_lambda", "mean_l1", "admm_converged"]
    _collect(files, write_table(_out_path(config, "em_trace", table=True), header,
                                [[r[k] for k in header] for r in records], config.format))
    summary = {"final_lambda": trace.final_lambda, "converged": trace.converged, "iterations": len(records)}
    _collect(files, write_json(_out_path(config, "em_summary.json"), summary))
    return {"success": True, "files": files, "summary": summary}


def run_gibbs_command(config):
    dataset, g = _load_problem(config)
    lambda_pc = float(gibbs_lambda_pc(g.lam, g.sigma2))
    chain = run_gibbs(g.y, g.phi, lambda_pc, iters=config.gibbs_iters, burn_in=config.gibbs_burn_in,
                      seed=config.seed, thin=config.gibbs_thin,
                      fix_sigma2=g.sigma2 if config.fix_sigma2 else None)
    files = []
    header = list(dataset.column_names) + ["sigma2"]
    rows = np.column_stack([chain.draws, chain.sigma2_draws]).tolist()
    _collect(files, write_table(_out_path(config, "chain", table=True), header, rows, config.format))
    post = summarize(chain.draws, g.lam, config.level, "gibbs")
    _collect(files, write_table(_out_path(config, "gibbs_summary", table=True),
                                ["coordinate", "median", "ci_low", "ci_high"],
                                _summary_rows(dataset.column_names, post), config.format))
    summary = {"lambda": g.lam, "lambda_pc": lambda_pc, "draws": chain.n_draws,
               "fix_sigma2": config.fix_sigma2, "tau_equivalent": chain.tau_equivalent}
    return {"success": True, "files": files, "summary": summary}


def run_path(config):
    dataset, g = _load_problem(config)
    cfg = _sweep_config(config)
    lambda_pc_hat = None
    path = lambda_sweep_path(g, config.lambda_grid, config.path_sampler, cfg)
    if config.lambda_select == "cv":
        best, _ = cross_validate_lambda(g.phi, g.y, path.lambda_grid, folds=DEFAULT_CV_FOLDS, seed=config.seed)
        path = with_optimal_lambda(path, best, "cv")
    elif config.lambda_select == "em":
        basis = build_multi_index_set(g.dim, config.order, rate=g.tau)
        em_cfg = EmConfig(lambda_init=config.lam, n_samples=config.n_train, rel_tol=config.em_rel_tol,
                          max_iter=config.em_max_iter, seed=config.seed)
        path = with_optimal_lambda(path, run_em(g, basis, cfg.admm, em_cfg).final_lambda, "em")
    elif config.lambda_select == "gibbs-em":
        em_cfg = EmConfig(lambda_init=float(gibbs_lambda_pc(config.lam, config.sigma2)), rel_tol=config.em_rel_tol,
                          max_iter=config.em_max_iter, seed=config.seed)
        trace = run_gibbs_em(g.y, g.phi, em_cfg, iters=config.gibbs_iters, burn_in=config.gibbs_burn_in,
                             fix_sigma2=g.sigma2 if config.fix_sigma2 else None)
        lambda_pc_hat = trace.final_lambda
        path = with_optimal_lambda(path, lambda_from_pc(lambda_pc_hat, g.sigma2), "gibbs-em")

    files = []
    header = ["lambda"] + (["lambda_pc"] if path.lambda_pc_grid is not None else []) + list(dataset.column_names)
    rows = []
    for k, lam in enumerate(path.lambda_grid):
        lead = [lam] + ([path.lambda_pc_grid[k]] if path.lambda_pc_grid is not None else [])
        rows.append(lead + list(path.medians_by_lambda[k]))
    _collect(files, write_table(_out_path(config, "path", table=True), header, rows, config.format))
    summary = {"sampler": path.sampler, "optimal_lambda": path.optimal_lambda, "method": path.method,
               "optimal_lambda_pc": lambda_pc_hat,
               "failures": {str(k): v for k, v in path.failures.items()}}
    _collect(files, write_json(_out_path(config, "path_summary.json"), summary))
    return {"success": True, "files": files, "summary": summary}


def run_compare(config):
    dataset, g = _load_problem(config)
    result = compare_samplers(g, _sweep_config(config))
    names = dataset.column_names
    files = []
    header = ["coordinate", "transport_median", "gibbs_fixed_median", "gibbs_sigma2_median", "lasso_point",
              "transport_ci_low", "transport_ci_high", "gibbs_fixed_ci_low", "gibbs_fixed_ci_high",
              "gibbs_sigma2_ci_low", "gibbs_sigma2_ci_high", "median_gap_sd"]
    gap = result.median_gap_in_sd
    summaries = (result.transport, result.gibbs_fixed, result.gibbs_sigma2)
    rows = []
    for j, name in enumerate(names):
        row = [name] + [s.medians[j] for s in summaries] + [result.lasso_point[j]]
        for s in summaries:
            row += [s.ci_low[j], s.ci_high[j]]
        rows.append(row + [gap[j]])
    _collect(files, write_table(_out_path(config, "compare", table=True), header, rows, config.format))
    summary = {
        "lambda": g.lam,
        "tau": g.tau,
        "lambda_pc": result.lambda_pc,
        "transport_converged": result.transport_converged,
        "max_median_gap_sd": float(np.max(gap)),
        "transport_narrower_count": result.narrower_count,
        "ks_between": result.ks_between,
        "ks_to_quadrature": result.ks_to_quadrature,
        "columns": names,
        "kde_grids": result.kde_grids,
        "kde_transport": result.kde_transport,
        "kde_gibbs_fixed": result.kde_gibbs_fixed,
        "kde_gibbs_sigma2": result.kde_gibbs_sigma2,
    }
    _collect(files, write_json(_out_path(config, "compare_summary.json"), summary))
    return {"success": True, "files": files,
            "summary": {k: summary[k] for k in ("lambda", "max_median_gap_sd", "transport_narrower_count")}}


def run_download(config):
    dest = config.data or os.path.join("data", "diabetes.tsv")
    result = download_diabetes(dest=dest, url=config.download_url or DIABETES_URL)
    if "error" in result:
        return result
    return {"success": True, "files": [result["file_path"]], "summary": {"rows": result["rows"]}}


def run_bench(config):
    dataset, g = _load_problem(config)
    timings = {}
    coeffs = {}
    for w in config.bench_workers:
        start = time.perf_counter()
        tmap = _fit_map(config, dataset, g, workers=int(w))
        timings[int(w)] = time.perf_counter() - start
        coeffs[int(w)] = tmap.coeffs
        logger.info("bench: %d worker(s) took %.2fs", w, timings[int(w)])
    base_w = min(timings)
    reference = coeffs[base_w]
    summary = {
        "seconds": {str(w): t for w, t in timings.items()},
        "speedup": {str(w): timings[base_w] / t for w, t in timings.items()},
        "bitwise_identical": all(np.array_equal(reference, c) for c in coeffs.values()),
    }
    files = []
    _collect(files, write_json(_out_path(config, "bench.json"), summary))
    return {"success": True, "files": files, "summary": summary}


# ============================================================================
#  DISPATCH
# ============================================================================

def _dispatch_command(config):
    """Dispatch a run to the appropriate subcommand."""
    dispatch_map = {
        "fit": lambda c: run_fit(c),
        "sample": lambda c: run_sample(c),
        "em": lambda c: run_em_command(c),
        "gibbs": lambda c: run_gibbs_command(c),
        "path": lambda c: run_path(c),
        "compare": lambda c: run_compare(c),
        "download": lambda c: run_download(c),
        "bench": lambda c: run_bench(c),
    }
    handler = dispatch_map.get(config.subcommand)
    if handler:
        return handler(config)
    return {"error": f"Unknown subcommand: {config.subcommand}", "kind": InvalidArgumentError.kind}


def execute_command(config, show_progress=True):
    """Run one subcommand behind a transient spinner panel.

    Library errors come back as {"error": ..., "kind": ...}; a numerical
    failure also leaves diagnostic.json in the output directory.
    """
    stop_event = threading.Event()
    try:
        if not show_progress:
            result = _dispatch_command(config)
        else:
            with Live(refresh_per_second=10, transient=True, console=console) as live:
                anim_thread = threading.Thread(target=_run_spinner_animation,
                                               args=(config.subcommand, stop_event, live))
                anim_thread.start()
                try:
                    result = _dispatch_command(config)
                finally:
                    stop_event.set()
                    anim_thread.join()
    except NumericalError as e:
        dump = write_diagnostic_dump(config.out, e, config.to_dict())
        result = {"error": str(e), "kind": e.kind, "diagnostic": dump}
    except TransportLassoError as e:
        result = {"error": str(e), "kind": e.kind}
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        result = {"error": f"Command execution error: {str(e)}", "kind": "error"}

    if show_progress:
        console.print(_build_status_panel(config.subcommand, is_complete=True, failed="error" in result))
    return result


def _print_result(result):
    tbl = Table(show_header=False, box=None, padding=(0, 1))
    tbl.add_column("key", style="dim cyan")
    tbl.add_column("value")
    for key, value in result.get("summary", {}).items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        tbl.add_row(str(key), str(value))
    for path in result.get("files", []):
        tbl.add_row("wrote", path)
    console.print(tbl)


def run(config, show_progress=True):
    """Validate, execute, report; returns the process exit status."""
    try:
        config.validate()
    except InvalidArgumentError as e:
        console.print(f"[red]Invalid configuration: {e}[/red]")
        return EXIT_INVALID

    result = execute_command(config, show_progress=show_progress)
    if "error" in result:
        console.print(f"[red]Error ({result.get('kind', 'error')}): {result['error']}[/red]")
        if "diagnostic" in result:
            console.print(f"[dim red]Diagnostic dump: {result['diagnostic']}[/dim red]")
        return EXIT_INVALID if result.get("kind") == InvalidArgumentError.kind else EXIT_FAILURE

    _print_result(result)
    return EXIT_OK
