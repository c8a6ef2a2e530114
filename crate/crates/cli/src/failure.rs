use polyckt::hecost::HeError;
use polyckt::hesim::SimError;
use polyckt::netgraph::GraphError;
use polyckt::numcore::NumError;
use polyckt::polyapprox::ApproxError;
use polyckt::scopt::ScoptError;
use polyckt::trainer::TrainError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag values (exit 1).
    Usage(String),
    /// Unreadable or malformed inputs (exit 2).
    Input(String),
    /// Divergence, non-convergence and other numeric failures (exit 3).
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

pub fn input(m: impl Into<String>) -> Failure {
    Failure::Input(m.into())
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<NumError> for Failure {
    fn from(e: NumError) -> Self {
        match e {
            NumError::Shape(_) => Failure::Input(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<ApproxError> for Failure {
    fn from(e: ApproxError) -> Self {
        match e {
            ApproxError::DegenerateRange { .. } | ApproxError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            ApproxError::Parse(_) => Failure::Input(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Num(n) => n.into(),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<HeError> for Failure {
    fn from(e: HeError) -> Self {
        match e {
            HeError::Graph(g) => g.into(),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<ScoptError> for Failure {
    fn from(e: ScoptError) -> Self {
        match e {
            ScoptError::He(h) => h.into(),
            ScoptError::Graph(g) => g.into(),
            ScoptError::ZeroEpochs | ScoptError::Budget(_) => Failure::Usage(e.to_string()),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Failure::Usage(m),
            TrainError::Data(m) => Failure::Input(m),
            TrainError::Num(n) => n.into(),
            TrainError::Graph(g) => g.into(),
            TrainError::Approx(a) => a.into(),
            e @ TrainError::Diverged { .. } => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::He(h) => h.into(),
            SimError::Graph(g) => g.into(),
            SimError::Config(m) => Failure::Usage(m),
            SimError::NotHeFriendly { .. } => Failure::Input(e.to_string()),
            e => Failure::Numeric(e.to_string()),
        }
    }
}
