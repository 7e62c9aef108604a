//! Error-to-exit-code mapping: 1 usage, 2 data, 3 numeric.

use tebfar::align::AlignError;
use tebfar::baselines::BaselineError;
use tebfar::bench::BenchError;
use tebfar::dataio::DataError;
use tebfar::gauss::GaussError;
use tebfar::gibbs::SamplerError;
use tebfar::klopt::KlOptError;
use tebfar::model::ModelError;
use tebfar::select::SelectError;

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Data(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(_) | CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) => CliError::Usage(e.to_string()),
            SamplerError::Numeric { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::InvalidGrid(_) | SelectError::InvalidPlan(_) => {
                CliError::Usage(e.to_string())
            }
            SelectError::Cell { .. } => CliError::Numeric(e.to_string()),
            SelectError::Data(inner) => CliError::Data(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<KlOptError> for CliError {
    fn from(e: KlOptError) -> Self {
        match e {
            KlOptError::InvalidGrid(_) | KlOptError::InvalidRank { .. } => {
                CliError::Usage(e.to_string())
            }
            KlOptError::LengthMismatch { .. } => CliError::Data(e.to_string()),
            KlOptError::Gauss(_) | KlOptError::Model(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::RankDeficient { .. } => CliError::Numeric(e.to_string()),
            BaselineError::EmptyGrid => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => CliError::Usage(e.to_string()),
            BenchError::Job { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GaussError> for CliError {
    fn from(e: GaussError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}
