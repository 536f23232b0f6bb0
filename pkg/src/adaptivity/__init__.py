from .adaptive import (
    HISTORY_COLUMNS,
    AdaptiveResult,
    ConvergenceHistory,
    HistoryRow,
    dorfler_mark,
    fit_slope,
    run_adaptive,
    starting_mesh,
)
