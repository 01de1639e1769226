//! Error categories and process exit codes.

use barlab_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Config,
    Manifest,
    Io,
    Parse,
    Format,
    Validation,
    Contract,
    Domain,
    Numeric,
}

impl Category {
    pub fn code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Config => 3,
            Category::Manifest => 4,
            Category::Io => 5,
            Category::Parse => 6,
            Category::Format => 7,
            Category::Validation => 8,
            Category::Contract => 9,
            Category::Domain => 10,
            Category::Numeric => 11,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Manifest => "manifest",
            Category::Io => "io",
            Category::Parse => "parse",
            Category::Format => "format",
            Category::Validation => "validation",
            Category::Contract => "contract",
            Category::Domain => "domain",
            Category::Numeric => "numeric",
        }
    }

    pub const ALL: [Category; 10] = [
        Category::Usage,
        Category::Config,
        Category::Manifest,
        Category::Io,
        Category::Parse,
        Category::Format,
        Category::Validation,
        Category::Contract,
        Category::Domain,
        Category::Numeric,
    ];
}

pub fn categorize(e: &Error) -> Category {
    match e {
        Error::Io { .. } => Category::Io,
        Error::Parse { .. } | Error::Json(_) => Category::Parse,
        Error::Format { .. } => Category::Format,
        Error::Validation(_) => Category::Validation,
        Error::Contract(_) => Category::Contract,
        Error::Domain(_) => Category::Domain,
        Error::Config(_) => Category::Config,
        Error::Manifest(_) => Category::Manifest,
        Error::NonFinite(_) | Error::Undefined(_) => Category::Numeric,
    }
}

/// The one-line diagnostic printed on failure.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {e}", categorize(e).name())
}
