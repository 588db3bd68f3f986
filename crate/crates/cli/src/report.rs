//! Machine-readable error records.

use serde::Serialize;
use tomosar_core::io::FORMAT_VERSION;
use tomosar_core::TomoError;

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    format_version: u32,
    status: &'a str,
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pixel: Option<u64>,
    /// Outermost context first.
    chain: Vec<String>,
}

fn kind(error: &TomoError) -> &'static str {
    match error {
        TomoError::InvalidInput(_) => "invalid_input",
        TomoError::DimensionMismatch { .. } => "dimension_mismatch",
        TomoError::MemoryBudget { .. } => "memory_budget",
        TomoError::NotConverged { .. } => "not_converged",
        TomoError::RankDeficient(_) => "rank_deficient",
        TomoError::UnreachableTarget { .. } => "unreachable_target",
        TomoError::Extrapolation { .. } => "extrapolation",
        TomoError::StaringMode { .. } => "staring_mode",
        TomoError::Parse { .. } => "parse",
        TomoError::Stage { source, .. } => kind(source),
        TomoError::Io(_) => "io",
        TomoError::Json(_) => "json",
        TomoError::Csv(_) => "csv",
    }
}

/// One-line JSON description of a failure.
pub fn error_record(error: &anyhow::Error) -> String {
    let tomo = error.chain().find_map(|e| e.downcast_ref::<TomoError>());
    let (stage, pixel) = match tomo {
        Some(TomoError::Stage { stage, pixel, .. }) => (Some(*stage), *pixel),
        _ => (None, None),
    };
    let kind = match tomo {
        Some(e) => kind(e),
        None if error.chain().any(|e| {
            e.is::<std::io::Error>()
                || e.downcast_ref::<serde_json::Error>()
                    .is_some_and(|j| j.is_io())
        }) =>
        {
            "io"
        }
        None => "usage",
    };
    let record = ErrorRecord {
        format_version: FORMAT_VERSION,
        status: "error",
        kind,
        message: error.root_cause().to_string(),
        stage,
        pixel,
        chain: error.chain().map(|e| e.to_string()).collect(),
    };
    serde_json::to_string(&record).unwrap_or_else(|_| {
        format!(
            "{{\"status\":\"error\",\"message\":{:?}}}",
            error.to_string()
        )
    })
}

/// Record for a command line that could not be parsed.
pub fn usage_record(message: &str) -> String {
    error_record(&anyhow::anyhow!("{}", message.trim_end()))
}
