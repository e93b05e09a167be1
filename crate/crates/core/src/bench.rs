//! Built-in benchmark programs.

use std::fmt;
use std::str::FromStr;

use crate::actions::{Action, TargetSpec, DEFAULT_KEY};
use crate::ir::{parse_program, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchmarkId {
    Logreg,
    Kmeans,
    Etl,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 3] = [BenchmarkId::Logreg, BenchmarkId::Kmeans, BenchmarkId::Etl];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::Logreg => "logreg",
            BenchmarkId::Kmeans => "kmeans",
            BenchmarkId::Etl => "etl",
        }
    }

    /// Program text as shipped.
    pub fn source(self) -> &'static str {
        match self {
            BenchmarkId::Logreg => include_str!("../benchmarks/logreg.ir"),
            BenchmarkId::Kmeans => include_str!("../benchmarks/kmeans.ir"),
            BenchmarkId::Etl => include_str!("../benchmarks/etl.ir"),
        }
    }

    pub fn program(self) -> Program {
        parse_program(self.source()).expect("built-in benchmark parses")
    }

    /// The known good configuration, where one exists.
    pub fn target(self) -> Option<TargetSpec> {
        match self {
            BenchmarkId::Logreg => Some(
                TargetSpec::parse(include_str!("../benchmarks/logreg.target"))
                    .expect("built-in target parses"),
            ),
            _ => None,
        }
    }

    /// Shortest alteration sequence reaching [`BenchmarkId::target`].
    pub fn known_path(self) -> Option<Vec<Action>> {
        match self {
            BenchmarkId::Logreg => Some(vec![
                Action::Partition {
                    entity: "data".into(),
                    key: DEFAULT_KEY.to_string(),
                },
                Action::Persist("data_p".into()),
                Action::Partition {
                    entity: "labels".into(),
                    key: DEFAULT_KEY.to_string(),
                },
                Action::Persist("labels_p".into()),
            ]),
            _ => None,
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BenchmarkId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected logreg, kmeans, or etl)"))
    }
}

pub fn make_benchmark(id: BenchmarkId) -> (Program, Option<TargetSpec>) {
    (id.program(), id.target())
}
