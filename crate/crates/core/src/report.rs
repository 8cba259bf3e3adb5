// SPDX-License-Identifier: Apache-2.0

//! Shared-state accounting for a build.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::task::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Local stamp already matched; nothing to do.
    Current,
    /// Output restored from the shared-state cache.
    Restored,
    /// Task ran.
    Executed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: TaskId,
    pub disposition: Disposition,
    /// The task's cost units (spent only when executed).
    pub cost: u64,
    pub taskhash: Digest,
    pub unihash: Digest,
    pub outhash: Digest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub wanted: u64,
    pub found: u64,
    pub missed: u64,
    pub current: u64,
    pub attempted: u64,
    pub not_rerun: u64,
    pub failed: u64,
    pub executed_cost: u64,
    pub total_cost: u64,
    /// Ordered by task id.
    pub per_task: Vec<TaskRecord>,
    /// Cache degradation notices, sorted and deduplicated.
    pub warnings: Vec<String>,
}

impl BuildReport {
    /// Derives every counter from `per_task`.
    pub fn from_records(mut per_task: Vec<TaskRecord>, cacheable: impl Fn(&TaskId) -> bool) -> Self {
        per_task.sort_by(|a, b| a.task.cmp(&b.task));
        let mut r = BuildReport::default();
        for rec in &per_task {
            r.attempted += 1;
            r.total_cost += rec.cost;
            match rec.disposition {
                Disposition::Current => r.current += 1,
                Disposition::Restored => r.found += 1,
                Disposition::Executed => {
                    r.executed_cost += rec.cost;
                    if cacheable(&rec.task) {
                        r.missed += 1;
                    }
                }
            }
        }
        r.wanted = r.found + r.missed;
        r.not_rerun = r.found + r.current;
        r.per_task = per_task;
        r
    }

    /// Checks the accounting identities; returns the first one violated.
    pub fn check_identities(&self) -> Result<(), &'static str> {
        if self.wanted != self.found + self.missed {
            return Err("wanted == found + missed");
        }
        if self.not_rerun != self.found + self.current {
            return Err("not_rerun == found + current");
        }
        if self.attempted != self.per_task.len() as u64 {
            return Err("attempted == number of tasks");
        }
        let executed: u64 = self
            .per_task
            .iter()
            .filter(|r| r.disposition == Disposition::Executed)
            .map(|r| r.cost)
            .sum();
        if self.executed_cost != executed {
            return Err("executed_cost == sum of executed task costs");
        }
        Ok(())
    }

    pub fn record(&self, task: &TaskId) -> Option<&TaskRecord> {
        self.per_task.iter().find(|r| &r.task == task)
    }

    /// `round(100·found/wanted)`, 100 for an empty lookup set.
    pub fn match_percent(&self) -> u64 {
        rounded_percent(self.found, self.wanted)
    }

    /// `round(100·(found+current)/(wanted+current))`, 100 when both are zero.
    pub fn complete_percent(&self) -> u64 {
        rounded_percent(self.found + self.current, self.wanted + self.current)
    }
}

/// Half-up rounding of `100·num/den` in integers.
fn rounded_percent(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 100;
    }
    let (num, den) = (num as u128, den as u128);
    ((200 * num + den) / (2 * den)) as u64
}

/// The two-line sstate and task summary.
pub fn summarize(r: &BuildReport) -> String {
    let tail = if r.failed == 0 {
        String::from("all succeeded.")
    } else {
        format!("{} failed.", r.failed)
    };
    format!(
        "Sstate summary: Wanted {} Found {} Missed {} Current {} ({}% match, {}% complete)\n\
         Tasks Summary: Attempted {} tasks of which {} didn't need to be rerun and {}\n",
        r.wanted,
        r.found,
        r.missed,
        r.current,
        r.match_percent(),
        r.complete_percent(),
        r.attempted,
        r.not_rerun,
        tail
    )
}
