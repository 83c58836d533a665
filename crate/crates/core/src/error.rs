use std::fmt;

/// Where in an input document a parse problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Element(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Element(path) => write!(f, "element {path}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-positive output extent")]
    EmptyOutput { op: &'static str },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient requested for a tensor that is not part of the recorded graph")]
    UnrecordedNode,

    #[error("{location}: {message}")]
    Parse { location: Location, message: String },

    #[error("mixed image ids in a single matching call: {0:?} and {1:?}")]
    MixedImages(String, String),

    #[error("mixed class ids in a single matching call: {0} and {1}")]
    MixedClasses(u32, u32),

    #[error("ground truth in image {image_id:?} references unknown class {class_id}")]
    UnknownClass { image_id: String, class_id: u32 },

    #[error("{0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Line(line),
            message: message.into(),
        }
    }

    pub(crate) fn parse_element(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Element(path.into()),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
