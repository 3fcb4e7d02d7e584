"""
Command-line surface, declared as data: one entry per subcommand with the
options it accepts. main.py turns this into argparse subparsers.
"""

_DATA = {
    "data": {"flag": "--data", "type": "string", "description": "CSV/TSV dataset with a header row"},
    "response": {"flag": "--response", "type": "string", "description": "Name of the response column (default: Y)"},
}

_MODEL = {
    "lam": {"flag": "--lambda", "type": "number", "description": "Lasso penalty lambda (tau = lambda / (2 sigma2))"},
    "sigma2": {"flag": "--sigma2", "type": "number", "description": "Noise variance (default 0.5, so lambda = tau)"},
}

_ADMM = {
    "rho": {"flag": "--rho", "type": "number", "description": "ADMM penalty parameter"},
    "order": {"flag": "--order", "type": "integer", "description": "Total order of the chaos basis"},
    "n_train": {"flag": "--n-train", "type": "integer", "description": "Number of prior training samples"},
    "tol": {"flag": "--tol", "type": "number", "description": "Relative change of B at which ADMM stops"},
    "tol_res": {"flag": "--tol-res", "type": "number", "description": "Primal residual at which ADMM stops"},
    "max_iter": {"flag": "--max-iter", "type": "integer", "description": "ADMM iteration cap"},
    "solver": {"flag": "--solver", "type": "string", "enum": ["cd", "girls"],
               "description": "Lasso solver used in the p-update"},
    "init_mode": {"flag": "--init", "type": "string", "enum": ["identity", "random"],
                  "description": "Initial map (identity or perturbed identity)"},
    "balance_residuals": {"flag": "--balance-residuals", "type": "boolean",
                          "description": "Adapt rho when primal and dual residuals drift apart"},
}

_CHAIN = {
    "gibbs_iters": {"flag": "--iters", "type": "integer", "description": "Kept Gibbs draws"},
    "gibbs_burn_in": {"flag": "--burn-in", "type": "integer", "description": "Discarded Gibbs iterations"},
    "gibbs_thin": {"flag": "--thin", "type": "integer", "description": "Keep every k-th draw"},
}

_GIBBS = {
    **_CHAIN,
    "fix_sigma2": {"flag": "--fix-sigma2", "type": "boolean",
                   "description": "Hold sigma2 fixed (same target as the transport map)"},
}

_SAMPLES = {
    "n_samples": {"flag": "--n", "type": "integer", "description": "Number of posterior draws to push through the map"},
    "level": {"flag": "--level", "type": "number", "description": "Credible interval level"},
}

COMMANDS = [
    {
        "name": "fit",
        "description": "Train a transport map for one lambda and write its coefficients",
        "parameters": {"properties": {**_DATA, **_MODEL, **_ADMM}, "required": ["data"]},
    },
    {
        "name": "sample",
        "description": "Load a fitted map and emit posterior draws",
        "parameters": {
            "properties": {
                "map_path": {"flag": "--map", "type": "string", "description": "Map JSON written by fit"},
                **_SAMPLES,
            },
            "required": ["map_path"],
        },
    },
    {
        "name": "em",
        "description": "Estimate lambda by EM with transport-map E-steps",
        "parameters": {
            "properties": {
                **_DATA, **_MODEL, **_ADMM,
                "em_max_iter": {"flag": "--em-max-iter", "type": "integer", "description": "EM iteration cap"},
                "em_rel_tol": {"flag": "--em-tol", "type": "number", "description": "Relative change of lambda at which EM stops"},
            },
            "required": ["data"],
        },
    },
    {
        "name": "gibbs",
        "description": "Run the Gibbs baseline sampler",
        "parameters": {"properties": {**_DATA, **_MODEL, **_GIBBS}, "required": ["data"]},
    },
    {
        "name": "path",
        "description": "Posterior medians across a lambda grid",
        "parameters": {
            "properties": {
                **_DATA, **_MODEL, **_ADMM, **_GIBBS, **_SAMPLES,
                "lambda_grid": {"flag": "--lambda-grid", "type": "array", "items": "number",
                                "description": "Increasing lambda values"},
                "path_sampler": {"flag": "--sampler", "type": "string", "enum": ["transport", "gibbs", "lasso-point"],
                                 "description": "How each grid point is summarized"},
                "lambda_select": {"flag": "--select", "type": "string", "enum": ["cv", "em", "gibbs-em", "none"],
                                  "description": "Tag the path with a cross-validated, transport-EM or Gibbs-EM lambda"},
                "em_max_iter": {"flag": "--em-max-iter", "type": "integer", "description": "EM iteration cap"},
                "em_rel_tol": {"flag": "--em-tol", "type": "number", "description": "Relative change of lambda at which EM stops"},
            },
            "required": ["data", "lambda_grid"],
        },
    },
    {
        "name": "compare",
        "description": "Transport map vs. both Gibbs chains at one lambda: medians, intervals, densities",
        "parameters": {"properties": {**_DATA, **_MODEL, **_ADMM, **_CHAIN, **_SAMPLES}, "required": ["data"]},
    },
    {
        "name": "download",
        "description": "Fetch the diabetes dataset into a local file",
        "parameters": {
            "properties": {
                "data": {"flag": "--data", "type": "string", "description": "Destination file (default data/diabetes.tsv)"},
                "download_url": {"flag": "--url", "type": "string", "description": "Source URL"},
            },
            "required": [],
        },
    },
    {
        "name": "bench",
        "description": "Time one fit at several worker counts and check the coefficients match",
        "parameters": {
            "properties": {
                **_DATA, **_MODEL, **_ADMM,
                "bench_workers": {"flag": "--bench-workers", "type": "array", "items": "integer",
                                  "description": "Worker counts to time"},
            },
            "required": ["data"],
        },
    },
]

# accepted by every subcommand
GLOBAL_OPTIONS = {
    "config": {"flag": "--config", "type": "string", "description": "JSON run configuration"},
    "preset": {"flag": "--preset", "type": "string", "enum": ["quick", "full"], "description": "Size preset"},
    "seed": {"flag": "--seed", "type": "integer", "description": "Master random seed"},
    "workers": {"flag": "--workers", "type": "integer",
                "description": "Worker threads (falls back to TRANSPORT_LASSO_THREADS)"},
    "out": {"flag": "--out", "type": "string", "description": "Output directory"},
    "format": {"flag": "--format", "type": "string", "enum": ["csv", "json"], "description": "Table output format"},
    "verbose": {"flag": "--verbose", "type": "boolean", "description": "Debug logging"},
}


def get_command(name):
    for command in COMMANDS:
        if command["name"] == name:
            return command
    return None
