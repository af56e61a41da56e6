use thiserror::Error;

/// Every failure the library reports. `code()` gives the stable short name
/// used in messages and by callers that match on failure kinds.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-softmax: softmax of an empty vector")]
    EmptySoftmax,
    #[error("attention-shape: {0}")]
    AttentionShape(String),
    #[error("mlp-shape: {0}")]
    MlpShape(String),
    #[error("blur-sigma: sigma must be positive, got {0}")]
    BlurSigma(f64),
    #[error("norm-shape: layer norm over a zero-width feature axis")]
    NormShape,
    #[error("no-backward: operation `{0}` has no analytic backward pass")]
    NoBackward(String),
    #[error("tensor-shape: {0}")]
    TensorShape(String),

    #[error("degenerate-box: box has zero area")]
    DegenerateBox,
    #[error("bias-shape: target dimensions must be at least 1x1, got {0}x{1}")]
    BiasShape(usize, usize),
    #[error("track-parse: {0}")]
    TrackParse(String),
    #[error("track-range: {0}")]
    TrackRange(String),
    #[error("track-frames: {0}")]
    TrackFrames(String),
    #[error("gvdm-format: {0}")]
    GvdmFormat(String),

    #[error("grounded-width: {0}")]
    GroundedWidth(String),
    #[error("bias-length: bias has {got} entries for {expected} tokens")]
    BiasLength { got: usize, expected: usize },

    #[error("empty-trace: no gate decisions recorded")]
    EmptyTrace,

    #[error("schedule-bounds: {0}")]
    ScheduleBounds(String),
    #[error("timestep-range: timestep {t} outside [0, {max}]")]
    TimestepRange { t: usize, max: usize },
    #[error("ddim-order: need t > t_prev, got t={t}, t_prev={t_prev}")]
    DdimOrder { t: usize, t_prev: usize },
    #[error("empty-batch: training batch has no items")]
    EmptyBatch,
    #[error("unet-shape: {0}")]
    UnetShape(String),
    #[error("gvck-format: {0}")]
    GvckFormat(String),

    #[error("schedule-order: keyframe indices must be strictly increasing")]
    ScheduleOrder,
    #[error("schedule-start: {0}")]
    ScheduleStart(String),
    #[error("window-too-large: context window {window} must be smaller than chunk size {chunk}")]
    WindowTooLarge { window: usize, chunk: usize },
    #[error("plan-coverage: {0}")]
    PlanCoverage(String),
    #[error("composite-shape: {0}")]
    CompositeShape(String),
    #[error("tc-frames: temporal consistency needs at least 2 frames, got {0}")]
    TcFrames(usize),
    #[error("cond-frames: tracks have {0} and {1} frames")]
    CondFrames(usize, usize),
    #[error("config: key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptySoftmax => "empty-softmax",
            Error::AttentionShape(_) => "attention-shape",
            Error::MlpShape(_) => "mlp-shape",
            Error::BlurSigma(_) => "blur-sigma",
            Error::NormShape => "norm-shape",
            Error::NoBackward(_) => "no-backward",
            Error::TensorShape(_) => "tensor-shape",
            Error::DegenerateBox => "degenerate-box",
            Error::BiasShape(..) => "bias-shape",
            Error::TrackParse(_) => "track-parse",
            Error::TrackRange(_) => "track-range",
            Error::TrackFrames(_) => "track-frames",
            Error::GvdmFormat(_) => "gvdm-format",
            Error::GroundedWidth(_) => "grounded-width",
            Error::BiasLength { .. } => "bias-length",
            Error::EmptyTrace => "empty-trace",
            Error::ScheduleBounds(_) => "schedule-bounds",
            Error::TimestepRange { .. } => "timestep-range",
            Error::DdimOrder { .. } => "ddim-order",
            Error::EmptyBatch => "empty-batch",
            Error::UnetShape(_) => "unet-shape",
            Error::GvckFormat(_) => "gvck-format",
            Error::ScheduleOrder => "schedule-order",
            Error::ScheduleStart(_) => "schedule-start",
            Error::WindowTooLarge { .. } => "window-too-large",
            Error::PlanCoverage(_) => "plan-coverage",
            Error::CompositeShape(_) => "composite-shape",
            Error::TcFrames(_) => "tc-frames",
            Error::CondFrames(..) => "cond-frames",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
