"""Pipeline commands: ingest, stability, fit, schedule, simulate, detect-bots.

Every public `cmd_*` function takes a RunConfig, writes its artifacts under
`config.output_dir` and returns a JSON-serialisable report.
"""

from __future__ import annotations

import logging
import math
import pathlib
from typing import Any

from recount import store as store_io
from recount._config import RunConfig
from recount._errors import InputError, InsufficientDataError
from recount._output import read_csv, write_block, write_csv
from recount.decay import (
    WORKING_HYPOTHESIS,
    DecayModel,
    ParetoModel,
    fit_exponential,
    fit_pareto,
    half_life,
    mean_lifetime,
)
from recount.engine import Policy, ReplayMetrics, detect_bot_rings, replay
from recount.ingest import load_store
from recount.scheduler import (
    PeriodTable,
    ServiceParams,
    activity_groups,
    apply_periods,
    estimate_group_rates,
    estimate_user_rates,
    optimize,
    period_table,
)
from recount.similarity import compute_pair
from recount.stability import (
    RunScan,
    SimilaritySeries,
    TimeGrid,
    build_all_series,
    collect_user_runs,
    histogram,
    moving_average,
    probability_function,
    scan_runs,
    select_pairs,
    survival_curve,
    write_points_csv,
    write_series_csv,
)
from recount.store import GraphStore, SimilarityEdge, build_store

logger = logging.getLogger(__name__)

_FIT_HEADER = [
    "curve",
    "model",
    "scale",
    "rate",
    "residual_std",
    "log_residual_std",
    "fitted_points",
    "excluded_points",
    "error",
]
_REPLAY_HEADER = [
    "time",
    "policy",
    "recompute_count",
    "served_requests",
    "mean_service_time",
    "precision",
    "recall",
    "n_fr",
    "n_ir",
]


def _open_store(config: RunConfig) -> GraphStore:
    path = config.resolved_store_path
    if not path.exists():
        raise InputError(f"No store at {path}; run 'ingest' first")
    return store_io.load(path)


def _service_params(config: RunConfig) -> ServiceParams:
    return ServiceParams(
        t_fr=config.t_fr,
        t_ir=config.t_ir,
        p_b=config.p_b,
        n_cr=config.n_cr,
        tau_visit=config.tau_visit,
    )


def _analyse(
    graph: GraphStore, config: RunConfig
) -> tuple[TimeGrid, list[SimilaritySeries]]:
    grid = TimeGrid.covering(graph, config.bucket_len)
    pairs = select_pairs(graph, grid, config.min_span, config.min_overlap, config.max_pairs)
    series = build_all_series(graph, pairs, grid, config.min_overlap, config.workers)
    logger.info("%d pairs over %d buckets", len(series), grid.bucket_count)
    return grid, series


def _period_table(
    graph: GraphStore, series: list[SimilaritySeries], config: RunConfig, lam: float
) -> PeriodTable:
    """Personal, group and population periods from the observed stability runs."""
    user_runs = collect_user_runs(series, config.d)
    groups = activity_groups(graph, config.groups) if graph.users else {}
    return period_table(
        lam,
        config.p_st,
        config.bucket_len,
        estimate_user_rates(user_runs, groups, config.min_intervals),
        groups,
        estimate_group_rates(user_runs, groups, config.min_intervals),
    )


def cmd_ingest(config: RunConfig) -> dict[str, Any]:
    """Parse a MovieLens ratings file and persist it as a store."""
    if not config.dataset_path:
        raise InputError("dataset_path is required for ingest")
    graph, report = load_store(config.dataset_path, strict=config.strict)
    target = config.resolved_store_path
    store_io.save(graph, target)
    return {
        "store": str(target),
        **report.as_dict(),
        "users": len(graph.users),
        "items": len(graph.items),
    }


def cmd_stability(config: RunConfig) -> dict[str, Any]:
    """Similarity series per pair, interval histogram and survival curve."""
    graph = _open_store(config)
    grid, series = _analyse(graph, config)
    out = config.output_path
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "table1.csv", "w", encoding="utf-8", newline="") as handle:
        write_series_csv(series, grid, handle)

    runs = RunScan()
    for item in series:
        runs.merge(scan_runs(item, config.d))
    hist = histogram(runs.lengths, config.d)
    smoothed = moving_average(hist, config.window)
    probabilities = probability_function(hist) if hist.counts else {}
    survival = survival_curve(hist, runs.runs).points() if runs.runs else []

    with open(out / "histogram.csv", "w", encoding="utf-8", newline="") as handle:
        write_points_csv(hist.points(), ["n", "N"], handle)
    with open(out / "smoothed.csv", "w", encoding="utf-8", newline="") as handle:
        write_points_csv(smoothed, ["n", "N"], handle)
    with open(out / "probability.csv", "w", encoding="utf-8", newline="") as handle:
        write_points_csv(sorted(probabilities.items()), ["n", "p"], handle)
    with open(out / "survival.csv", "w", encoding="utf-8", newline="") as handle:
        write_points_csv(survival, ["t", "k"], handle)

    user_runs = collect_user_runs(series, config.d)
    write_csv(
        out / "user_runs.csv",
        ["userId", "completed", "censored"],
        ([user, len(scan.lengths), scan.censored] for user, scan in sorted(user_runs.items())),
    )
    return {
        "pairs": len(series),
        "buckets": grid.bucket_count,
        "bucket_len": grid.bucket_len,
        "completed_intervals": len(runs.lengths),
        "censored_runs": runs.censored,
        "output_dir": str(out),
    }


def _read_points(path: pathlib.Path) -> list[tuple[float, float]]:
    if not path.exists():
        raise InputError(f"Missing curve {path}; run 'stability' first or set fit_input")
    _, rows = read_csv(path)
    points = []
    for number, row in enumerate(rows, start=2):
        try:
            points.append((float(row[0]), float(row[1])))
        except (IndexError, ValueError) as exc:
            raise InputError(f"{path}:{number}: expected two numeric columns") from exc
    return points


def _fit_row(curve: str, model: DecayModel | ParetoModel | None, error: str) -> list[Any]:
    if model is None:
        return [curve, "", None, None, None, None, None, None, error]
    if isinstance(model, DecayModel):
        name, scale, rate = "exponential", model.n0, model.lam
    else:
        name, scale, rate = "pareto", model.c, model.alpha
    return [
        curve,
        name,
        scale,
        rate,
        model.residual_std,
        model.log_residual_std,
        model.fitted_points,
        model.excluded_points,
        "",
    ]


def cmd_fit(config: RunConfig) -> dict[str, Any]:
    """Fit exponential and power-law decay to the interval and survival curves."""
    out = config.output_path
    if config.fit_input:
        curves = {"input": _read_points(pathlib.Path(config.fit_input))}
    else:
        frequency = "histogram.csv" if config.fit_raw else "smoothed.csv"
        curves = {
            "frequency": _read_points(out / frequency),
            "survival": _read_points(out / "survival.csv"),
        }

    rows: list[list[Any]] = []
    summary: dict[str, Any] = {}
    errors: list[str] = []
    for curve, points in curves.items():
        for fitter in (fit_exponential, fit_pareto):
            try:
                model = fitter(points)
            except InsufficientDataError as exc:
                label = "exponential" if fitter is fit_exponential else "pareto"
                rows.append(_fit_row(curve, None, f"{label}: {exc}"))
                errors.append(f"{curve}/{label}: {exc}")
                continue
            rows.append(_fit_row(curve, model, ""))
            prefix = f"{curve}.{rows[-1][1]}"
            summary[f"{prefix}.scale"] = rows[-1][2]
            summary[f"{prefix}.rate"] = rows[-1][3]
            summary[f"{prefix}.residual_std"] = model.residual_std
            summary[f"{prefix}.log_residual_std"] = model.log_residual_std
            summary[f"{prefix}.excluded_points"] = model.excluded_points
            if isinstance(model, DecayModel):
                summary[f"{prefix}.tau"] = mean_lifetime(model)
                summary[f"{prefix}.half_life"] = half_life(model)

    if not summary:
        raise InsufficientDataError("; ".join(errors) or "No curve to fit")

    source = "input" if config.fit_input else "survival"
    scheduler_lambda = summary.get(f"{source}.exponential.rate")
    summary["scheduler_lambda"] = scheduler_lambda
    summary["time_unit_seconds"] = config.bucket_len
    summary["caveat"] = WORKING_HYPOTHESIS
    write_csv(out / "fit.csv", _FIT_HEADER, rows)
    write_block(out / "fit.txt", summary)
    return {**summary, "errors": errors}


def _lambda_from_fit(config: RunConfig) -> float:
    if config.lam > 0:
        return config.lam
    path = config.output_path / "fit.csv"
    if not path.exists():
        raise InputError("No decay rate: set lam or run 'fit' first")
    _, rows = read_csv(path)
    by_curve = {row[0]: row for row in rows if len(row) > 3 and row[1] == "exponential"}
    for curve in ("survival", "input"):
        if curve in by_curve:
            return float(by_curve[curve][3])
    raise InsufficientDataError(f"{path} holds no exponential survival fit")


def cmd_schedule(config: RunConfig) -> dict[str, Any]:
    """Optimal staleness budget, and recomputation periods written onto the store's edges."""
    lam = _lambda_from_fit(config)
    params = _service_params(config)
    solution = optimize(params, lam, config.bucket_len)

    graph = _open_store(config)
    _, series = _analyse(graph, config)
    span = graph.time_range()
    now = span[1] if span is not None else 0
    for item in series:
        coefficient = compute_pair(graph, item.pair, now, config.min_overlap)
        if coefficient is not None:
            graph.put_edge(SimilarityEdge(item.pair, coefficient, None, math.inf, now))

    table = _period_table(graph, series, config, lam)
    apply_periods(graph, table)
    store_io.save(graph, config.resolved_store_path)

    out = config.output_path
    users = sorted(set(table.user_groups) | set(table.user_periods))
    write_csv(
        out / "periods.csv",
        ["userId", "group", "recount_period", "average_rp"],
        (
            [
                user,
                table.user_groups.get(user),
                table.user_periods.get(user),
                table.average_rp_of(user),
            ]
            for user in users
        ),
    )
    report = {
        **solution.as_dict(),
        "time_unit": f"1 unit = {config.bucket_len} s",
        "average_rp": table.average_rp,
        "average_rp_units": table.average_rp / config.bucket_len,
        "users_with_period": len(table.user_periods),
        **{
            f"group{group}.average_rp": period
            for group, period in sorted(table.group_periods.items())
        },
        "edges": len(graph.edges()),
    }
    write_block(out / "schedule.txt", report)
    return report


def _policies(config: RunConfig, table: PeriodTable | None) -> list[Policy]:
    name = config.policy.lower()
    if name == "always":
        return [Policy.always()]
    if name == "periodic":
        return [Policy.periodic(config.period)]
    if name in ("adaptive", "all"):
        if table is None:
            raise InputError(f"Policy '{config.policy}' needs a period table")
        if name == "adaptive":
            return [Policy.adaptive(table)]
        interval = config.period if config.period > 0 else table.average_rp
        return [Policy.always(), Policy.periodic(interval), Policy.adaptive(table)]
    raise InputError(f"Unknown policy '{config.policy}' (always, periodic, adaptive, all)")


def _replay_rows(metrics: ReplayMetrics) -> list[list[Any]]:
    return [
        [
            point.time,
            metrics.policy,
            point.recompute_count,
            point.served_requests,
            point.mean_service_time,
            point.precision_at_n,
            point.recall_at_n,
            point.n_fr_fraction,
            point.n_ir_fraction,
        ]
        for point in metrics.checkpoints
    ]


def cmd_simulate(config: RunConfig) -> dict[str, Any]:
    """Replay the rating log under recompute policies and compare their cost."""
    if not 0 < config.split <= 1:
        raise InputError(f"split must lie in (0, 1], got {config.split}")
    params = _service_params(config)
    graph = _open_store(config)
    if config.max_users:
        keep = set(sorted(graph.users)[: config.max_users])
        graph = build_store(ev for ev in graph.iter_events() if ev.user_id in keep)
    span = graph.time_range()
    if span is None:
        raise InsufficientDataError("The store holds no ratings to replay")
    split_time = None
    if config.split < 1:
        split_time = span[0] + int(config.split * (span[1] - span[0]))

    table = None
    lam = None
    if config.policy.lower() in ("adaptive", "all"):
        lam = _lambda_from_fit(config)
        train = graph
        if split_time is not None:
            train = build_store(ev for ev in graph.iter_events() if ev.timestamp <= split_time)
        _, series = _analyse(train, config)
        table = _period_table(train, series, config, lam)

    grid = TimeGrid.covering(graph, config.bucket_len)
    events = list(graph.iter_events())
    results = [
        replay(
            events,
            policy,
            params,
            grid,
            d=config.d,
            min_overlap=config.min_overlap,
            split_time=split_time,
            n=config.top_n,
            relevance_threshold=config.relevance_threshold,
            k_neighbors=config.k_neighbors,
        )
        for policy in _policies(config, table)
    ]

    out = config.output_path
    write_csv(
        out / "replay.csv",
        _REPLAY_HEADER,
        (row for metrics in results for row in _replay_rows(metrics)),
    )
    summary: dict[str, Any] = {"split_time": split_time, "users": len(graph.users)}
    baseline = next((m for m in results if m.policy == "always"), None)
    for metrics in results:
        prefix = metrics.policy
        summary[f"{prefix}.recompute_count"] = metrics.recompute_count
        summary[f"{prefix}.served_requests"] = metrics.served_requests
        summary[f"{prefix}.mean_service_time"] = metrics.simulated_mean_service_time
        summary[f"{prefix}.precision"] = metrics.precision_at_n
        summary[f"{prefix}.recall"] = metrics.recall_at_n
        summary[f"{prefix}.n_fr"] = metrics.n_fr_fraction
        summary[f"{prefix}.n_ir"] = metrics.n_ir_fraction
        if baseline is not None and baseline.simulated_mean_service_time > 0:
            summary[f"{prefix}.time_ratio"] = (
                metrics.simulated_mean_service_time / baseline.simulated_mean_service_time
            )
    if lam is not None:
        predicted = optimize(params, lam, config.bucket_len)
        summary["predicted_mean_service_time"] = predicted.mean_service_time
        summary["predicted_load_coefficient"] = predicted.load_coefficient
    write_block(out / "replay_summary.txt", summary)
    return summary


def cmd_detect_bots(config: RunConfig) -> dict[str, Any]:
    """Groups of users whose similarity stays near one for a long time."""
    if not 0 < config.epsilon < 1:
        raise InputError(f"epsilon must lie in (0, 1), got {config.epsilon}")
    graph = _open_store(config)
    grid = TimeGrid.covering(graph, config.bucket_len)
    rings = detect_bot_rings(
        graph,
        grid,
        epsilon=config.epsilon,
        min_duration=config.min_duration,
        min_size=config.min_size,
        min_overlap=config.min_overlap,
        workers=config.workers,
    )
    write_csv(
        config.output_path / "bots.csv",
        ["ring", "members", "size", "min_pairwise_k", "stable_duration"],
        (
            [
                index,
                " ".join(str(user) for user in sorted(ring.members)),
                len(ring.members),
                ring.min_pairwise_k,
                ring.stable_duration,
            ]
            for index, ring in enumerate(rings, start=1)
        ),
    )
    return {
        "rings": [
            {
                "members": sorted(ring.members),
                "min_pairwise_k": ring.min_pairwise_k,
                "stable_duration": ring.stable_duration,
            }
            for ring in rings
        ],
    }
