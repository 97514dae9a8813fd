//! Federated discriminative naive Bayes for discrete data.
//!
//! Clients fit naive Bayes probability tables locally and keep them. A
//! per-cell weight vector is then optimized by capped L-BFGS on each client's
//! conditional log-likelihood and averaged on a server over several rounds.
//! Generative, pooled-count and per-client weighted baselines are included,
//! along with a harness that runs the full cross-validated protocol.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod generative;
pub mod layout;
pub mod optimizer;
pub mod seed;
pub mod weighted;

pub use dataset::{
    load_dataset, make_folds, partition_clients, ClientPartition, DataFormat, DiscreteDataset, FoldSplit,
    LoadOptions, MissingPolicy, Row, Schema, SplitDump,
};
pub use error::{Error, Result};
pub use experiment::{
    run_experiment, run_experiment_on, summarize, Algorithm, ExperimentConfig, ExperimentOutcome, IterationCap,
    MetricsRecord, SummaryRow,
};
pub use federation::{
    aggregate, init_global_weights, local_round, personalize, run_federation, Aggregation, ClientState,
    FederationConfig, FederationOutcome, MessageFormat, RoundRecord, WeightMessage,
};
pub use generative::{fit_counts, log_joint, normalize, pool_counts, predict, CountTable, ParamTable};
pub use layout::ParamLayout;
pub use optimizer::{minimize, Objective, OptimizeReport, OptimizerConfig, Termination};
pub use seed::{derive_seed, SeedPurpose};
pub use weighted::{cll, log_posterior, predict_weighted, weighted_scores, CllEvaluation, WeightVector};
