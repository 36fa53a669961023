use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its valid range. `key` is the dotted config path.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("did not reach steady state within {cycles} cycles ({what})")]
    Convergence { what: String, cycles: usize },

    #[error(
        "numerical divergence at step {step} (t = {t_s} s): x = {x_m} m, v = {v_mps} m/s, vp = {vp_v} V, v_cap = {v_cap_v} V"
    )]
    Divergence {
        step: u64,
        t_s: f64,
        x_m: f64,
        v_mps: f64,
        vp_v: f64,
        v_cap_v: f64,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
