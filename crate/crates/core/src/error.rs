use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the middleware can report. Each variant maps to one stable
/// wire code (see [`Error::code`]); peers and clients decode by that code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // catalog
    #[error("malformed spec: {0}")]
    MalformedSpec(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("relationship references unknown table or column: {0}")]
    DanglingRelationship(String),
    #[error("duplicate source id: {0}")]
    DuplicateSourceId(String),
    #[error("cannot resolve spec reference: {0}")]
    UnresolvableRef(String),
    #[error("logical table name `{0}` is already bound to another source")]
    LogicalNameCollision(String),

    // sql front end
    #[error("syntax error at character {offset}: {message}")]
    SyntaxError { offset: usize, message: String },
    #[error("unsupported feature at character {offset}: {feature}")]
    UnsupportedFeature { offset: usize, feature: String },
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("ambiguous column: {0}")]
    AmbiguousColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    // planning and execution
    #[error("query would require a cross product between {0}")]
    CrossProductRejected(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("result too large: {cells} cells exceeds cap of {cap}")]
    ResultTooLarge { cells: usize, cap: usize },
    #[error("malformed fixture: {0}")]
    MalformedFixture(String),

    // remote hops
    #[error("remote {url} answered {code}: {message}")]
    RemoteError { url: String, code: String, message: String },
    #[error("remote {0} did not answer in time")]
    RemoteTimeout(String),
    #[error("cannot decode payload: {0}")]
    DecodeError(String),
    #[error("malformed url: {0}")]
    MalformedUrl(String),

    // etl
    #[error("malformed stage file: {0}")]
    MalformedStage(String),
    #[error("cannot write stage file: {0}")]
    StageWriteFailed(String),
    #[error("malformed job file: {0}")]
    MalformedJob(String),

    // benchmarks
    #[error("benchmark scenario unavailable: {0}")]
    ScenarioUnavailable(String),

    // service lifecycle
    #[error("server is shutting down")]
    Shutdown,
    #[error("address in use: {0}")]
    AddressInUse(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable wire code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedSpec(_) => "MalformedSpec",
            Error::DuplicateName(_) => "DuplicateName",
            Error::DanglingRelationship(_) => "DanglingRelationship",
            Error::DuplicateSourceId(_) => "DuplicateSourceId",
            Error::UnresolvableRef(_) => "UnresolvableRef",
            Error::LogicalNameCollision(_) => "LogicalNameCollision",
            Error::SyntaxError { .. } => "SyntaxError",
            Error::UnsupportedFeature { .. } => "UnsupportedFeature",
            Error::UnknownTable(_) => "UnknownTable",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::AmbiguousColumn(_) => "AmbiguousColumn",
            Error::TypeMismatch(_) => "TypeMismatch",
            Error::CrossProductRejected(_) => "CrossProductRejected",
            Error::BackendUnavailable(_) => "BackendUnavailable",
            Error::ResultTooLarge { .. } => "ResultTooLarge",
            Error::MalformedFixture(_) => "MalformedFixture",
            Error::RemoteError { .. } => "RemoteError",
            Error::RemoteTimeout(_) => "RemoteTimeout",
            Error::DecodeError(_) => "DecodeError",
            Error::MalformedUrl(_) => "MalformedUrl",
            Error::MalformedStage(_) => "MalformedStage",
            Error::StageWriteFailed(_) => "StageWriteFailed",
            Error::MalformedJob(_) => "MalformedJob",
            Error::ScenarioUnavailable(_) => "ScenarioUnavailable",
            Error::Shutdown => "Shutdown",
            Error::AddressInUse(_) => "AddressInUse",
            Error::BadRequest(_) => "BadRequest",
            Error::Io(_) => "Io",
        }
    }

    /// HTTP status used when this error is answered over the wire.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::RemoteError { .. } | Error::RemoteTimeout(_) | Error::DecodeError(_) => 502,
            Error::BackendUnavailable(_) | Error::Shutdown => 503,
            Error::Io(_) => 500,
            _ => 400,
        }
    }

    /// Rebuilds an error from a wire code and message. Codes that carry
    /// structured fields locally are restored with the message as payload.
    pub fn from_code(code: &str, message: &str) -> Option<Error> {
        let m = message.to_string();
        Some(match code {
            "MalformedSpec" => Error::MalformedSpec(m),
            "DuplicateName" => Error::DuplicateName(m),
            "DanglingRelationship" => Error::DanglingRelationship(m),
            "DuplicateSourceId" => Error::DuplicateSourceId(m),
            "UnresolvableRef" => Error::UnresolvableRef(m),
            "LogicalNameCollision" => Error::LogicalNameCollision(m),
            "SyntaxError" => Error::SyntaxError { offset: 0, message: m },
            "UnsupportedFeature" => Error::UnsupportedFeature { offset: 0, feature: m },
            "UnknownTable" => Error::UnknownTable(m),
            "UnknownColumn" => Error::UnknownColumn(m),
            "AmbiguousColumn" => Error::AmbiguousColumn(m),
            "TypeMismatch" => Error::TypeMismatch(m),
            "CrossProductRejected" => Error::CrossProductRejected(m),
            "BackendUnavailable" => Error::BackendUnavailable(m),
            "MalformedFixture" => Error::MalformedFixture(m),
            "MalformedUrl" => Error::MalformedUrl(m),
            "MalformedStage" => Error::MalformedStage(m),
            "StageWriteFailed" => Error::StageWriteFailed(m),
            "MalformedJob" => Error::MalformedJob(m),
            "ScenarioUnavailable" => Error::ScenarioUnavailable(m),
            "Shutdown" => Error::Shutdown,
            "BadRequest" => Error::BadRequest(m),
            "DecodeError" => Error::DecodeError(m),
            "RemoteTimeout" => Error::RemoteTimeout(m),
            "Io" => Error::Io(m),
            _ => return None,
        })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
