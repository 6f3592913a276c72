use ethd_sim::calibration::CalibrationError;
use ethd_sim::contact::ContactError;
use ethd_sim::dsp::DspError;
use ethd_sim::psychophysics::PsychError;
use ethd_sim::signal::SignalError;
use ethd_sim::stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::InvalidSweep(_) => CliError::Config(e.to_string()),
            CalibrationError::Device(ref d)
                if matches!(d, ethd_sim::device::DeviceError::InvalidParams(_)) =>
            {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ContactError> for CliError {
    fn from(e: ContactError) -> Self {
        match e {
            ContactError::Diverged { .. } | ContactError::NoSeparation(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PsychError> for CliError {
    fn from(e: PsychError) -> Self {
        match e {
            PsychError::NonConvergence { .. } | PsychError::Terminated => {
                CliError::Numeric(e.to_string())
            }
            PsychError::Contact(c) => c.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::Crop { .. } | DspError::Threshold(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Degenerate(_) | StatsError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::Io(_) => CliError::Io(e.to_string()),
            SignalError::Csv(c) => c.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}
