use serde::Serialize;
use serde_json::{json, Value};

use super::spec::{AlertRule, SloSpec};

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ExportRecord<'a> {
    Slo(&'a SloSpec),
    AlertRule(&'a AlertRule),
}

/// One canonical object per line: every SLO, then every alert rule.
pub fn export_lines(slos: &[SloSpec], rules: &[AlertRule]) -> String {
    let mut out = String::new();
    let recs = slos.iter().map(ExportRecord::Slo).chain(rules.iter().map(ExportRecord::AlertRule));
    for r in recs {
        out.push_str(&crate::canonical::to_string(&r).expect("export records serialize"));
        out.push('\n');
    }
    out
}

/// `groups → rules` layout with `alert`, `expr`, `for`, `labels`, grouped per SLO.
pub fn rules_file(rules: &[AlertRule]) -> Value {
    let mut groups: Vec<(String, Vec<Value>)> = Vec::new();
    for r in rules {
        let rule = json!({
            "alert": r.name,
            "expr": r.expr,
            "for": r.for_duration.to_string(),
            "labels": {
                "severity": r.severity.to_string(),
                "slo": r.slo,
                "burn_rate": format!("{}", r.burn_rate_threshold),
            },
        });
        match groups.iter_mut().find(|(n, _)| *n == r.slo) {
            Some((_, v)) => v.push(rule),
            None => groups.push((r.slo.clone(), vec![rule])),
        }
    }
    json!({ "groups": groups.into_iter().map(|(name, rules)| json!({"name": name, "rules": rules})).collect::<Vec<_>>() })
}
