//! Command-line front end: configuration, trajectory output, and the
//! verification, spectrum and gradient-check reports.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use thiserror::Error;
use volterra_core::integrate::IntegrateError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integration failed: {0}")]
    Integration(#[from] IntegrateError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Integration(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

/// Evaluates `task(0..count)` on up to `jobs` threads and returns the results
/// in index order, so the output does not depend on scheduling.
pub fn run_indexed<T, F>(count: usize, jobs: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.clamp(1, count.max(1));
    if jobs == 1 {
        return (0..count).map(task).collect();
    }
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        let task = &task;
        let handles: Vec<_> = (0..jobs)
            .map(|worker| {
                scope.spawn(move || {
                    (worker..count)
                        .step_by(jobs)
                        .map(|i| (i, task(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            for (i, value) in handle.join().expect("worker panicked") {
                slots[i] = Some(value);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every index evaluated")).collect()
}
