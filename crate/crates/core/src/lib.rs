pub mod ablation;
pub mod bandit;
pub mod baselines;
pub mod changepoint;
pub mod config_space;
pub mod control_plane;
pub mod dtree;
pub mod error;
pub mod gp;
pub mod harness;
pub mod netclass;
pub mod plt_oracle;
pub mod report;
pub mod workload;
