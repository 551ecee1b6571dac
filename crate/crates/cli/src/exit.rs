//! Exit codes and the one-line JSON error written to stderr.

use gaitfuse_core::Error;
use serde::Serialize;

pub const USAGE: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const RUNTIME: u8 = 3;

#[derive(Debug, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: u8,
    pub error: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(kind: String, detail: String) -> Self {
        // clap's message spans several lines; keep the first meaningful one
        let first = detail.lines().find(|l| !l.trim().is_empty()).unwrap_or(&kind);
        Failure {
            code: USAGE,
            error: "usage",
            message: first.trim_start_matches("error: ").to_string(),
        }
    }

    pub fn line(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plain struct");
        v["code"] = self.code.into();
        v.to_string()
    }
}

/// Validation errors are problems with the inputs or configuration; anything
/// else is a runtime failure.
fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Metadata(_)
            | Error::Shape { .. }
            | Error::InvalidArgument { .. }
            | Error::InvalidTensor(_)
            | Error::DepthDropout { .. }
            | Error::RegionOutOfBounds { .. }
            | Error::Format { .. }
            | Error::Dataset(_)
    )
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e
            .chain()
            .find_map(|c| c.downcast_ref::<Error>())
            .is_some_and(is_validation)
            || e.chain()
                .any(|c| c.downcast_ref::<crate::commands::InvalidInput>().is_some());
        let message = format!("{e:#}").replace('\n', " ");
        if validation {
            Failure {
                code: VALIDATION,
                error: "validation",
                message,
            }
        } else {
            Failure {
                code: RUNTIME,
                error: "runtime",
                message,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_are_validation() {
        let e = anyhow::Error::new(Error::Config(vec!["a".into(), "b".into()])).context("loading config");
        let f = Failure::from(e);
        assert_eq!(f.code, VALIDATION);
        assert_eq!(
            f.line(),
            r#"{"code":2,"error":"validation","message":"loading config: invalid configuration: a; b"}"#
        );
    }

    #[test]
    fn io_errors_are_runtime() {
        let e = anyhow::Error::new(Error::Io(std::io::Error::other("disk")));
        assert_eq!(Failure::from(e).code, RUNTIME);
    }
}
