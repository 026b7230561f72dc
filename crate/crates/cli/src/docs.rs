//! Versioned JSON documents written by the commands. Their schemas live in
//! `schemas/` at the repository root.

use serde::Serialize;

use hiad_core::metrics::EvalReport;

pub const REPORT_FORMAT: &str = "hiad-report";
pub const SCORES_FORMAT: &str = "hiad-scores";
pub const DOC_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct ReportDoc {
    pub format: &'static str,
    pub version: u32,
    pub category: String,
    /// `null` for the random-detector control.
    pub bundle: Option<String>,
    pub random_detector: bool,
    pub metrics: EvalReport,
}

#[derive(Debug, Serialize)]
pub struct MapFile {
    pub file: String,
    pub height: usize,
    pub width: usize,
    pub dtype: &'static str,
}

#[derive(Debug, Serialize)]
pub struct ScoreEntry {
    pub id: String,
    pub source: String,
    pub score: f32,
    pub heatmap: String,
    pub map: MapFile,
}

#[derive(Debug, Serialize)]
pub struct ScoresDoc {
    pub format: &'static str,
    pub version: u32,
    pub bundle: String,
    pub low_res: bool,
    /// Score range mapped onto the heatmap color ramp.
    pub render_range: [f32; 2],
    pub images: Vec<ScoreEntry>,
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    serde_json::to_string_pretty(doc).expect("documents serialize") + "\n"
}
