//! Result records: TOML documents with a `[result]` table and the resolved
//! config under `[config]`.

use std::path::Path;

use dhym_core::monitors::{ConcavityReport, EigenInequalityReport};
use dhym_core::{EstimateSnapshot, SubsolutionReport, SupersolutionReport};
use toml::{Table, Value};

use crate::config::RunConfig;

pub const RESULT_FILE: &str = "result.toml";

#[derive(Default)]
pub struct Record(Table);

impl Record {
    pub fn new(command: &str) -> Self {
        let mut t = Table::new();
        t.insert("command".into(), command.into());
        Record(t)
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.0.insert(key.into(), v.into());
        self
    }

    pub fn section(&mut self, key: &str, t: Table) -> &mut Self {
        self.0.insert(key.into(), Value::Table(t));
        self
    }

    pub fn render(&self, cfg: &RunConfig) -> String {
        let mut doc = Table::new();
        doc.insert("result".into(), Value::Table(self.0.clone()));
        doc.insert(
            "config".into(),
            Value::try_from(cfg).expect("configs serialize to TOML"),
        );
        toml::to_string(&doc).expect("records serialize to TOML")
    }

    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> std::io::Result<()> {
        std::fs::write(dir.join(RESULT_FILE), self.render(cfg))
    }
}

fn table<const K: usize>(pairs: [(&str, Value); K]) -> Table {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

pub fn snapshot(s: &EstimateSnapshot) -> Table {
    table([
        ("c0_sub", s.c0_sub.into()),
        ("c0", s.c0.into()),
        ("grad_sup", s.grad_sup.into()),
        ("mu1_sup", s.mu1_sup.into()),
        ("lambda_min", s.lambda_min.into()),
        ("lambda_product_min", s.lambda_product_min.into()),
        ("phase_min", s.phase_min.into()),
        ("phase_max", s.phase_max.into()),
        ("trace_F_min", s.trace_f_min.into()),
    ])
}

pub fn inequalities(r: &EigenInequalityReport) -> Table {
    table([
        ("passes", r.passes().into()),
        ("applicable", r.applicable.into()),
        ("product_margin", r.product_margin.into()),
        ("lower_bound", r.lower_bound.into()),
        ("lower_margin", r.lower_margin.into()),
    ])
}

pub fn concavity(r: &ConcavityReport) -> Table {
    table([
        ("passes", r.passes.into()),
        ("trials", int(r.trials)),
        ("max_value", r.max_value.into()),
    ])
}

pub fn subsolution(r: &SubsolutionReport) -> Table {
    table([
        ("is_subsolution", r.is_subsolution.into()),
        ("worst_margin", r.worst_margin.into()),
        ("worst_point", int(r.worst_point)),
        (
            "per_j_margins",
            Value::Array(r.per_j_margins.iter().map(|m| Value::Float(*m)).collect()),
        ),
    ])
}

pub fn supersolution(r: &SupersolutionReport) -> Table {
    table([
        ("passes", r.passes().into()),
        ("min_slack", r.min_slack.into()),
        ("theta0_hypercritical_margin", r.hypercritical_margin.into()),
    ])
}
