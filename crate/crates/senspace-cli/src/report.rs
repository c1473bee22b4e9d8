//! The summary: one pass/fail entry per acceptance criterion whose stage ran.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: usize,
    pub name: String,
    pub stage: String,
    pub pass: bool,
    pub measured: Value,
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: bool,
    pub criteria: Vec<Criterion>,
}

fn num(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

fn all_below(v: &Value, keys: &[&str], tol: f64) -> bool {
    keys.iter().all(|k| num(v, k) < tol)
}

fn pick(v: &Value, keys: &[&str]) -> Value {
    Value::Object(keys.iter().map(|k| (k.to_string(), v.get(*k).cloned().unwrap_or(Value::Null))).collect())
}

/// Evaluates the stage outputs, keyed by stage name.
pub fn evaluate(stages: &BTreeMap<String, Value>) -> Summary {
    let mut criteria = Vec::new();
    let mut push = |id: usize, name: &str, stage: &str, threshold: &str, f: &dyn Fn(&Value) -> (bool, Value)| {
        if let Some(v) = stages.get(stage) {
            let (pass, measured) = f(v);
            criteria.push(Criterion { id, name: name.into(), stage: stage.into(), pass, measured, threshold: threshold.into() });
        }
    };
    push(1, "GH hyperKähler identity", "triples", "max normalized |Q| < 1e-9", &|v| {
        (all_below(v, &["max_defect"], 1e-9), pick(v, &["max_defect"]))
    });
    push(2, "metric reconstruction", "triples", "max relative error < 1e-12", &|v| {
        (all_below(v, &["max_metric_error"], 1e-12), pick(v, &["max_metric_error"]))
    });
    push(3, "ellipse identities", "verify-appendix-a", "max residual < 1e-10 and worked pair", &|v| {
        let pair = v.get("worked_pair").and_then(Value::as_bool).unwrap_or(false);
        (all_below(v, &["max_residual"], 1e-10) && pair, pick(v, &["max_residual", "worked_pair"]))
    });
    push(4, "AH profile", "profile-ah", "matches < 1e-6, decay slope -1 ± 0.15", &|v| {
        let ok = all_below(v, &["a_match_30", "c_match_30"], 1e-6) && (num(v, "decay_slope") + 1.0).abs() < 0.15;
        (ok, pick(v, &["a_match_30", "c_match_30", "decay_slope"]))
    });
    push(5, "defect scaling", "glue-scan", "slope in [2.7, 3.5], outside-shell defect < 1e-12", &|v| {
        let s = num(v, "fitted_slope");
        ((2.7..=3.5).contains(&s) && all_below(v, &["max_outside_shell"], 1e-12), pick(v, &["fitted_slope", "max_outside_shell"]))
    });
    push(6, "flux quantization", "connection", "|flux/2π − 2w| < 1e-6", &|v| {
        (all_below(v, &["max_error"], 1e-6), pick(v, &["max_error"]))
    });
    push(7, "mode solvers", "mode-solvers", "residuals < 1e-6", &|v| {
        let keys = ["yukawa_residual", "invariant_vs_quadrature"];
        (all_below(v, &keys, 1e-6), pick(v, &keys))
    });
    push(8, "commutator log-law", "commutator-scan", "ratio in [0.35, 0.65]", &|v| {
        ((0.35..=0.65).contains(&num(v, "ratio")), pick(v, &["ratio", "predicted"]))
    });
    push(9, "patched inverse contraction", "patched-inverse", "first residual < 0.5, each refinement halves it", &|v| {
        let h: Vec<f64> = v.get("history").and_then(Value::as_array).map_or(Vec::new(), |a| a.iter().filter_map(Value::as_f64).collect());
        let ok = !h.is_empty() && h[0] < 0.5 && h.windows(2).all(|w| w[1] < 0.5 * w[0]);
        (ok, pick(v, &["history"]))
    });
    push(10, "nonlinear corrector", "perturb", "≤ 8 steps to ‖Q‖∞ < 1e-10, quadratic tail, order ≥ 1.9", &|v| {
        let steps = v.get("steps").and_then(Value::as_u64).unwrap_or(u64::MAX);
        let consts: Vec<f64> = v
            .get("quadratic_constants")
            .and_then(Value::as_array)
            .map_or(Vec::new(), |a| a.iter().filter_map(Value::as_f64).collect());
        let order = v.get("linearization").map_or(f64::NAN, |l| num(l, "min_order"));
        let ok = steps <= 8 && all_below(v, &["recomputed_defect"], 1e-10) && consts.iter().all(|c| *c < 1.0) && order >= 1.9;
        let mut m = pick(v, &["steps", "recomputed_defect", "quadratic_constants"]);
        m["linearization_order"] = order.into();
        (ok, m)
    });
    Summary { pass: criteria.iter().all(|c| c.pass), criteria }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn green() -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("triples".into(), json!({ "max_defect": 1e-16, "max_metric_error": 1e-16 }));
        m.insert("glue-scan".into(), json!({ "fitted_slope": 2.98, "max_outside_shell": 1e-16 }));
        m.insert("connection".into(), json!({ "max_error": 1e-12 }));
        m
    }

    #[test]
    fn all_green() {
        let s = evaluate(&green());
        assert!(s.pass);
        assert_eq!(s.criteria.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 5, 6]);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["pass"], json!(true));
        assert!(v["criteria"].is_array());
    }

    #[test]
    fn failed_slope_marks_only_that_criterion() {
        let mut m = green();
        m.insert("glue-scan".into(), json!({ "fitted_slope": 2.1, "max_outside_shell": 1e-16 }));
        let s = evaluate(&m);
        assert!(!s.pass);
        let failed: Vec<usize> = s.criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect();
        assert_eq!(failed, vec![5]);
    }

    #[test]
    fn missing_numbers_fail() {
        let mut m = BTreeMap::new();
        m.insert("connection".into(), json!({}));
        assert!(!evaluate(&m).pass);
    }
}
