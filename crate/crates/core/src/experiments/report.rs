use std::fmt::Write as _;

use sha2::{Digest, Sha256};

/// Key=value text organised in `[section]` blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub sections: Vec<(String, Vec<(String, String)>)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn section(&mut self, name: &str, entries: Vec<(String, String)>) -> &mut Self {
        self.sections.push((name.to_string(), entries));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }
}

/// First 16 hex digits of the SHA-256 of the `key=value` lines.
pub fn config_hash(pairs: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in pairs {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// File name stem `{kind}-{hash}-s{seed}`.
pub fn report_stem(kind: &str, hash: &str, seed: u64) -> String {
    format!("{kind}-{hash}-s{seed}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillRow {
    pub lead: u32,
    /// `None` for all target months.
    pub month: Option<u8>,
    pub r: f64,
    pub attention: Option<f64>,
}

/// `lead,month,r,attention_indicator` table. Missing values are left empty.
pub fn skill_table_csv(rows: &[SkillRow]) -> String {
    let mut out = String::from("lead,month,r,attention_indicator\n");
    for row in rows {
        let month = row.month.map_or("all".to_string(), |m| m.to_string());
        let attention = row.attention.map_or(String::new(), |a| format!("{a:.16e}"));
        let _ = writeln!(out, "{},{month},{:.16e},{attention}", row.lead, row.r);
    }
    out
}
