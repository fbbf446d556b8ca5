//! Plain `key:value` documents, one pair per line, for reports consumed by the CLI.

use crate::geometry::StructureReport;
use crate::monitors::{ConcavityReport, EigenInequalityReport, EstimateSnapshot};
use crate::subsolution::{DichotomyReport, SubsolutionReport, SupersolutionReport};

pub trait KeyValue {
    fn pairs(&self) -> Vec<(String, String)>;

    fn render(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(prefix);
            out.push_str(&k);
            out.push(':');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl KeyValue for SubsolutionReport {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            kv("is_subsolution", self.is_subsolution),
            kv("worst_margin", self.worst_margin),
            kv("worst_point", self.worst_point),
            kv("per_j_margins", list(&self.per_j_margins)),
        ]
    }
}

impl KeyValue for SupersolutionReport {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            kv("is_supersolution", self.is_supersolution),
            kv("min_slack", self.min_slack),
            kv("theta0_hypercritical", self.hypercritical),
            kv("theta0_hypercritical_margin", self.hypercritical_margin),
            kv("theta0_min", self.theta0.min()),
            kv("theta0_max", self.theta0.max()),
        ]
    }
}

impl KeyValue for DichotomyReport {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            kv("theta", self.theta),
            kv("branch_a_points", self.branch_a_points),
            kv("branch_b_points", self.branch_b_points),
            kv("neither_points", self.neither_points),
            kv("trace_f_min", self.trace_f_min),
        ];
        for p in &self.failing {
            v.push(kv(
                &format!("failing[{}]", p.index),
                format!("l_value={},trace_f={},max_f={}", p.l_value, p.trace_f, p.max_f),
            ));
        }
        v
    }
}

impl KeyValue for StructureReport {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            kv("preset", &self.preset),
            kv("all_pass", self.all_pass()),
            kv("frame_independent", self.frame_independent),
            kv("min_frame_det", self.min_frame_det),
            kv("min_frame_det_point", self.min_frame_det_point),
            kv("chi_positive", self.chi_positive),
            kv("min_chi_eigenvalue", self.min_chi_eigenvalue),
            kv("min_chi_point", self.min_chi_point),
            kv("bracket_consistent", self.bracket_consistent),
            kv("bracket_residual", self.bracket_residual),
            kv("bracket_max_norm", self.bracket_max_norm),
        ];
        if let Some(z) = self.flat_bracket_zero {
            v.push(kv("flat_bracket_zero", z));
        }
        v
    }
}

impl KeyValue for EstimateSnapshot {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            kv("c0_sub", self.c0_sub),
            kv("c0", self.c0),
            kv("grad_sup", self.grad_sup),
            kv("mu1_sup", self.mu1_sup),
            kv("lambda_min", self.lambda_min),
            kv("lambda_product_min", self.lambda_product_min),
            kv("phase_min", self.phase_min),
            kv("phase_max", self.phase_max),
            kv("trace_F_min", self.trace_f_min),
        ]
    }
}

impl KeyValue for EigenInequalityReport {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            kv("applicable", self.applicable),
            kv("product_ok", self.product_ok),
            kv("lower_ok", self.lower_ok),
            kv("product_margin", self.product_margin),
            kv("lower_bound", self.lower_bound),
            kv("lower_margin", self.lower_margin),
        ]
    }
}

impl KeyValue for ConcavityReport {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            kv("trials", self.trials),
            kv("max_value", self.max_value),
            kv("passes", self.passes),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_pair_per_line() {
        let r = SubsolutionReport {
            is_subsolution: true,
            worst_margin: 0.5,
            worst_point: 3,
            per_j_margins: vec![0.5, 1.0],
        };
        assert_eq!(
            r.render("sub."),
            "sub.is_subsolution:true\nsub.worst_margin:0.5\nsub.worst_point:3\nsub.per_j_margins:0.5,1\n"
        );
    }
}
