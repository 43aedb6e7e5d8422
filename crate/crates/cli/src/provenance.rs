use serde::Serialize;
use serde_json::Value;

pub const TOOL: &str = "wallhack";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header comment lines identifying the producing command: generator,
/// command, parameters as canonical JSON (keys sorted) and, when the command
/// is randomized, the seed.
pub fn header(command: &str, params: &impl Serialize, seed: Option<u64>) -> Vec<String> {
    let params = serde_json::to_value(params).expect("parameters serialize");
    let mut lines = vec![
        format!("generator: {TOOL} {VERSION}"),
        format!("command: {command}"),
        format!("params: {}", canonical(&params)),
    ];
    if let Some(seed) = seed {
        lines.push(format!("seed: {seed}"));
    }
    lines
}

fn canonical(v: &Value) -> String {
    // serde_json's default map is ordered by key.
    serde_json::to_string(v).expect("json value serializes")
}

/// Provenance block embedded in JSON reports.
#[derive(Debug, Clone, Serialize)]
pub struct ReportProvenance {
    pub generator: String,
    pub command: String,
    pub params: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ReportProvenance {
    pub fn new(command: &str, params: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            generator: format!("{TOOL} {VERSION}"),
            command: command.to_string(),
            params: serde_json::to_value(params).expect("parameters serialize"),
            seed,
        }
    }
}

pub fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn header_is_stable_and_sorted() {
        let lines = header("survey", &json!({"scenario": "nlos-biquad", "a": 1}), Some(3));
        assert_eq!(lines[1], "command: survey");
        assert_eq!(lines[2], r#"params: {"a":1,"scenario":"nlos-biquad"}"#);
        assert_eq!(lines[3], "seed: 3");
        assert_eq!(comment_block(&lines[1..2]), "# command: survey\n");
    }
}
