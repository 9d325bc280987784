//! Error metrics, the artificial-prevalence protocol, aggregation and
//! significance tests.

pub mod metrics;
pub mod protocol;
pub mod report;
pub mod stats;

pub use metrics::{ae, kld, pair, rae, smooth, Metric, MetricValue};
pub use protocol::{
    cell_seed, run_protocol, run_protocol_with_threads, thread_count, FnQuantifier, ProtocolConfig, ProtocolRow,
    Quantifier, ScoredQuantifier, THREADS_ENV,
};
pub use report::{
    build_report, mean_std, plot_data, read_results, summarize, write_plot, write_results, write_summary, PlotRow,
    Report, SummaryRow, PLOT_HEADER, RESULTS_HEADER, SUMMARY_HEADER,
};
pub use stats::{incomplete_beta, ln_gamma, paired_ttest, student_t_cdf, TTest};
