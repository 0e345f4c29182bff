//! Background pipeline runs, polled by id.

use std::sync::Mutex;

use cfu_core::store::PipelineSummary;
use serde::{Deserialize, Serialize};

use crate::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub dataset: String,
    pub state: JobState,
    /// Current step while running.
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<PipelineSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Default)]
pub(crate) struct Jobs {
    list: Mutex<Vec<Job>>,
}

impl Jobs {
    fn with<T>(&self, f: impl FnOnce(&mut Vec<Job>) -> T) -> T {
        f(&mut self.list.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn start(&self, dataset: &str) -> u64 {
        self.with(|l| {
            let id = l.len() as u64 + 1;
            l.push(Job {
                id,
                dataset: dataset.to_string(),
                state: JobState::Running,
                phase: "queued".into(),
                seq: None,
                result: None,
                error: None,
            });
            id
        })
    }

    pub fn phase(&self, id: u64, phase: &str) {
        self.with(|l| l[id as usize - 1].phase = phase.to_string());
    }

    pub fn finish(&self, id: u64, outcome: Result<(u64, PipelineSummary), ApiError>) {
        self.with(|l| {
            let job = &mut l[id as usize - 1];
            job.phase = "done".into();
            match outcome {
                Ok((seq, summary)) => {
                    job.state = JobState::Succeeded;
                    job.seq = Some(seq);
                    job.result = Some(summary);
                }
                Err(e) => {
                    job.state = JobState::Failed;
                    job.error = Some(e);
                }
            }
        });
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.with(|l| id.checked_sub(1).and_then(|k| l.get(k as usize)).cloned())
    }
}
