//! Exit-code policy: 0 success/PASS, 1 quantitative FAIL, 2 usage or
//! configuration error, 3 runtime divergence. Quantitative FAILs are
//! ordinary return values; this type carries only the 2s and 3s.

use ulmc_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Unusable configuration or input; exit 2.
    Config(String),
    /// The simulation itself blew up; exit 3.
    Diverged(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Divergence { .. } | CoreError::TooFewSurvivors { .. } => {
                CliError::Diverged(err.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_maps_to_exit_three_and_the_rest_to_two() {
        assert_eq!(CliError::from(CoreError::Divergence { step: 7 }).code(), 3);
        assert_eq!(
            CliError::from(CoreError::TooFewSurvivors { h: 0.5, survivors: 0, total: 3 }).code(),
            3
        );
        assert_eq!(CliError::from(CoreError::InvalidParameter("x".into())).code(), 2);
        assert_eq!(CliError::from(CoreError::UnsupportedDimension { dim: 3 }).code(), 2);
        assert_eq!(CliError::Config("bad".into()).code(), 2);
    }
}
