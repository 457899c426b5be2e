use std::fmt;
use std::path::Path;

use popgrid_core::geojson::GeoJsonError;
use popgrid_core::popmodel::ModelError;
use popgrid_core::raster::RasterError;
use popgrid_core::services::ServicesError;
use popgrid_core::zonal::ZonalError;

use crate::chart::ChartError;

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    IoFailure,
    ParseError,
    CrsMismatch,
    SchemaError,
    InvalidInput,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::IoFailure => 2,
            Self::ParseError => 3,
            Self::CrsMismatch => 4,
            Self::SchemaError => 5,
            Self::InvalidInput => 6,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Exit code for command-line usage errors.
pub const USAGE_EXIT: i32 = 64;

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Category::IoFailure, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }

    /// `Category: message` on one line.
    pub fn line(&self) -> String {
        let msg = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("{}: {msg}", self.category)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

fn csv_category(e: &csv::Error) -> Category {
    if e.is_io_error() {
        Category::IoFailure
    } else {
        Category::ParseError
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        let category = match &e {
            RasterError::MalformedHeader { .. }
            | RasterError::TokenCountMismatch { .. }
            | RasterError::NonNumericToken { .. }
            | RasterError::InvalidGrid(_) => Category::ParseError,
            RasterError::CrsMismatch { .. } => Category::CrsMismatch,
            RasterError::OutOfBounds { .. } | RasterError::InvalidThreshold(_) => Category::InvalidInput,
            RasterError::Io(_) => Category::IoFailure,
        };
        Self::new(category, e.to_string())
    }
}

impl From<ZonalError> for CliError {
    fn from(e: ZonalError) -> Self {
        let category = match &e {
            ZonalError::CrsMismatch { .. } => Category::CrsMismatch,
            ZonalError::InvalidZone { .. } => Category::InvalidInput,
            ZonalError::Schema(_) => Category::SchemaError,
            ZonalError::Parse { .. } => Category::ParseError,
            ZonalError::Csv(c) => csv_category(c),
            ZonalError::Io(_) => Category::IoFailure,
        };
        Self::new(category, e.to_string())
    }
}

impl From<GeoJsonError> for CliError {
    fn from(e: GeoJsonError) -> Self {
        Self::new(Category::ParseError, e.to_string())
    }
}

impl From<ServicesError> for CliError {
    fn from(e: ServicesError) -> Self {
        let category = match &e {
            ServicesError::NegativePopulation(_)
            | ServicesError::NonFinite(_)
            | ServicesError::InvalidRate(_)
            | ServicesError::InvalidShare(_) => Category::InvalidInput,
            ServicesError::Schema(_) => Category::SchemaError,
            ServicesError::Parse { .. } => Category::ParseError,
            ServicesError::Csv(c) => csv_category(c),
            ServicesError::Io(_) => Category::IoFailure,
        };
        Self::new(category, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let category = match &e {
            ModelError::Schema(_) => Category::SchemaError,
            ModelError::Parse { .. } => Category::ParseError,
            ModelError::Csv(c) => csv_category(c),
            ModelError::Io(_) => Category::IoFailure,
            _ => Category::InvalidInput,
        };
        Self::new(category, e.to_string())
    }
}

impl From<ChartError> for CliError {
    fn from(e: ChartError) -> Self {
        Self::new(Category::InvalidInput, e.to_string())
    }
}
