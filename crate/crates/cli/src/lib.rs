//! Experiment runner for evolved spiking policy networks.

pub mod config;
pub mod evolve;
pub mod plot;
pub mod report;
pub mod serve;

/// Category used in the one-line error printed on failure.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spn_core::Error>() {
            return e.kind();
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<csv::Error>() {
            return "csv";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "other"
}
