use thiserror::Error;

/// Phase-space location attached to numerical guard failures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Location {
    pub coords: Vec<f64>,
    pub time: Option<f64>,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "z = {:?}", self.coords)?;
        if let Some(t) = self.time {
            write!(f, ", t = {t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluator returned a non-Hermitian matrix (residual {residual:.3e}) at {at}")]
    NonHermitianEvaluation { residual: f64, at: Location },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("spectral gap {gap:.3e} below gap_min {gap_min:.3e} at {at}")]
    GapViolation { gap: f64, gap_min: f64, at: Location },
    #[error("projector derivative methods disagree by {discrepancy:.3e}")]
    MethodDisagreement { discrepancy: f64 },
    #[error("{quantity}: alternative formulas disagree by {discrepancy:.3e}")]
    FormulaDisagreement {
        quantity: &'static str,
        discrepancy: f64,
    },
    #[error("Liouville density {density} is not positive")]
    NonPositiveDensity { density: f64 },
    #[error("order-epsilon projector residual {residual:.3e} too large")]
    ResidualTooLarge { residual: f64 },
    #[error("corrected symplectic form is numerically singular at {at}")]
    SingularForm { at: Location },
    #[error("adaptive step size underflow at t = {time} (h = {step:.3e})")]
    StepFailure { time: f64, step: f64 },
    #[error("quantized Hermitian symbol is not Hermitian (residual {residual:.3e})")]
    NonHermitianSymbol { residual: f64 },
    #[error("operators or states live on different grids")]
    GridMismatch,
    #[error("projector symbol eigenvalue {eigenvalue} inside [0.25, 0.75] (state energy {energy})")]
    ClusterGapViolation { eigenvalue: f64, energy: f64 },
    #[error("all errors below 1e-14; the curve is exact and has no slope")]
    DegenerateFit,
    #[error("quadrature did not self-converge (last change {change:.3e})")]
    QuadratureNotConverged { change: f64 },
    #[error("plaquette flux {flux:.4} reaches pi; refine the torus grid")]
    VortexOnPlaquette { flux: f64 },
    #[error("flow-map interpolation check failed (deviation {deviation:.3e})")]
    InterpolationFailure { deviation: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Guards signalling that the asymptotic regime broke down (as opposed to bad input).
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::GapViolation { .. }
                | Error::ClusterGapViolation { .. }
                | Error::NonPositiveDensity { .. }
                | Error::SingularForm { .. }
                | Error::VortexOnPlaquette { .. }
                | Error::StepFailure { .. }
        )
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidInput(_) | Error::Json(_))
    }

    /// Attaches a time stamp to a location-carrying error.
    pub fn at_time(mut self, t: f64) -> Self {
        match &mut self {
            Error::GapViolation { at, .. }
            | Error::NonHermitianEvaluation { at, .. }
            | Error::SingularForm { at } => at.time = Some(t),
            _ => {}
        }
        self
    }

    pub fn location(&self) -> Option<&Location> {
        match self {
            Error::GapViolation { at, .. }
            | Error::NonHermitianEvaluation { at, .. }
            | Error::SingularForm { at } => Some(at),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
