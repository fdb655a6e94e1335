//! Per-joint error tables: a fixed-width text form and one JSON object per
//! evaluated set, both with the 17 joints then `Overall`.

use std::fmt::Write as _;
use std::path::Path;

use csipose_core::metrics::JointErrorReport;
use csipose_core::skeleton::{Joint, JOINT_COUNT};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedReport {
    /// Which samples were evaluated, e.g. `test` or `holdout:S5`.
    pub set: String,
    /// `p-mpjpe` or `mpjpe`.
    pub metric: String,
    pub report: JointErrorReport,
}

pub fn format_table(r: &NamedReport) -> String {
    let mut head = String::new();
    let mut vals = String::new();
    for (name, v) in r.report.rows() {
        let width = name.len().max(6);
        let _ = write!(head, " {name:>width$}");
        let _ = write!(vals, " {v:>width$.1}");
    }
    format!(
        "{} (unit: mm) on {} [{} frames]\n{}\n{}\n",
        r.metric.to_uppercase(),
        r.set,
        r.report.frames,
        head.trim_start(),
        vals.trim_start()
    )
}

pub fn to_json_line(r: &NamedReport) -> String {
    let mut m = Map::new();
    m.insert("set".into(), r.set.clone().into());
    m.insert("metric".into(), r.metric.clone().into());
    m.insert("unit".into(), "mm".into());
    m.insert("frames".into(), r.report.frames.into());
    for (name, v) in r.report.rows() {
        m.insert(name.into(), v.into());
    }
    serde_json::to_string(&Value::Object(m)).expect("report serializes")
}

pub fn parse_json_lines(path: &Path, text: &str) -> Result<Vec<NamedReport>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse { path: path.into(), line: i + 1, message };
        let obj: Map<String, Value> = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let text_field = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_owned).ok_or_else(|| parse(format!("missing {k}")));
        let num = |k: &str| obj.get(k).and_then(Value::as_f64).ok_or_else(|| parse(format!("missing {k}")));
        let mut per_joint = [0.0; JOINT_COUNT];
        for j in Joint::ALL {
            per_joint[j.index()] = num(j.name())?;
        }
        let frames = obj.get("frames").and_then(Value::as_u64).ok_or_else(|| parse("missing frames".into()))? as usize;
        out.push(NamedReport {
            set: text_field("set")?,
            metric: text_field("metric")?,
            report: JointErrorReport { per_joint_mm: per_joint, overall_mm: num("Overall")?, frames },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedReport {
        NamedReport {
            set: "test".into(),
            metric: "p-mpjpe".into(),
            report: JointErrorReport::from_per_joint(std::array::from_fn(|i| 10.0 + i as f64), 12),
        }
    }

    #[test]
    fn table_columns_follow_joint_order() {
        let t = format_table(&sample());
        let header = t.lines().nth(1).unwrap();
        let names: Vec<_> = header.split_whitespace().collect();
        assert_eq!(names[..3], ["MidHip", "LHip", "LKnee"]);
        assert_eq!(names.len(), 18);
        assert_eq!(names[17], "Overall");
        assert!(t.lines().nth(2).unwrap().ends_with("18.0"));
    }

    #[test]
    fn json_keys_keep_table_order_and_round_trip() {
        let r = sample();
        let line = to_json_line(&r);
        assert!(line.find("\"MidHip\"").unwrap() < line.find("\"RWrist\"").unwrap());
        assert!(line.find("\"RWrist\"").unwrap() < line.find("\"Overall\"").unwrap());
        let back = parse_json_lines(Path::new("r"), &line).unwrap();
        assert_eq!(back, vec![r]);
    }
}
