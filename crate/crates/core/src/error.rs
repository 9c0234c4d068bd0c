use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two sizes that must agree do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// The blended skinning matrix is (numerically) singular.
    DegenerateWarp { det: f64 },
    /// A direction that must be normalised has zero length.
    ZeroNormal,
    /// The scalar field has the same sign over the whole grid.
    EmptySurface,
    /// A mesh with no vertices or faces was passed where geometry is required.
    EmptyMesh,
    /// A non-finite value showed up where finite values are required.
    NonFinite(&'static str),
    /// Anything else that fails validation.
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    }

    /// True for errors caused by a numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateWarp { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Error::DegenerateWarp { det } => {
                write!(f, "degenerate skinning warp (det = {det:e})")
            }
            Error::ZeroNormal => f.write_str("zero-length normal"),
            Error::EmptySurface => f.write_str("field does not change sign over the grid"),
            Error::EmptyMesh => f.write_str("mesh has no faces"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
