use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { dims: Vec<usize>, len: usize },
    #[error("expected input shape {expected}, got {actual}")]
    Mismatch { expected: String, actual: String },
}

/// One violated rule in a network description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(i) => write!(f, "layer {i}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("malformed network document: {0}")]
    Malformed(String),
    #[error("unsupported layer kind `{kind}` at layer {layer}")]
    UnsupportedKind { layer: usize, kind: String },
    #[error("invalid network:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("layer {layer}: {source}")]
    Shape {
        layer: usize,
        #[source]
        source: ShapeError,
    },
    #[error("layer {layer}: accumulator value {value} exceeds {bits}-bit range")]
    AccumulatorOverflow { layer: usize, value: i64, bits: u32 },
    #[error("layer {layer}: {message}")]
    Unsupported { layer: usize, message: String },
    #[error(transparent)]
    BadShape(#[from] ShapeError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("field `{field}` value {value} does not fit in {width} bits")]
    FieldOverflow {
        field: &'static str,
        value: u16,
        width: u32,
    },
    #[error("cannot encode invalid function bits {0:#04x}")]
    InvalidFunc(u8),
    #[error("schedule table is empty")]
    EmptyTable,
    #[error("schedule needs {needed} entries but the table holds {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("malformed schedule dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("layer {layer}: needs {needed} tiles but a chip holds {per_chip}")]
    LayerTooLarge {
        layer: usize,
        needed: usize,
        per_chip: usize,
    },
    #[error("design needs {needed} chips but at most {limit} are available")]
    InsufficientChips { needed: usize, limit: usize },
    #[error("layer {layer}: {message}")]
    Unsupported { layer: usize, message: String },
    #[error("tile position {position} outside region of {size} tiles")]
    PositionOutOfRegion { position: usize, size: usize },
    #[error("invalid architecture config: {0}")]
    Arch(String),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("malformed design manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum FabricError {
    #[error("link contention at cycle {cycle}: tile ({x},{y}) chip {chip} direction {dir} written twice")]
    Contention {
        cycle: u64,
        x: usize,
        y: usize,
        chip: usize,
        dir: &'static str,
    },
    #[error("ROFM buffer overflow at tile ({x},{y}) chip {chip}: {bytes} B exceeds {capacity} B")]
    BufferOverflow {
        x: usize,
        y: usize,
        chip: usize,
        bytes: usize,
        capacity: usize,
    },
    #[error("invalid function bits {raw:#04x} fetched at tile ({x},{y})")]
    InvalidFunc { x: usize, y: usize, raw: u8 },
    #[error("timeout after {cycles} cycles: {missing} output elements missing (first: {first:?})")]
    Timeout {
        cycles: u64,
        missing: usize,
        first: Vec<(usize, usize, usize)>,
    },
    #[error("schedule fault at tile ({x},{y}) chip {chip}, cycle {cycle}: {message}")]
    ScheduleFault {
        x: usize,
        y: usize,
        chip: usize,
        cycle: u64,
        message: String,
    },
    #[error("input shape {got:?} does not match the network input {want}")]
    InputShape { got: Vec<usize>, want: String },
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("unknown event category `{0}`")]
    UnknownCategory(String),
    #[error("degenerate report input: {0}")]
    Degenerate(&'static str),
    #[error("malformed ledger: {0}")]
    Malformed(String),
    #[error("invalid energy config: {0}")]
    Config(String),
}
