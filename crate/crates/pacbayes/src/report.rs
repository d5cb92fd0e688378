//! Report files: CSV tables prefixed with `#`-commented header lines that
//! embed the resolved run configuration, plus JSON summaries. Floating-point
//! cells use the shortest representation that round-trips exactly, so a
//! repeated run reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

/// Report I/O errors.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// A rectangular table with leading comment lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    /// Comment lines, written with a `# ` prefix before the header row.
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    /// Rows of already-formatted cells; every row matches `columns` in length.
    pub rows: Vec<Vec<String>>,
}

impl Report {
    #[must_use]
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            comments: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    /// Appends the resolved configuration (or any multi-line text) as
    /// comment lines.
    pub fn push_comment_block(&mut self, block: &str) {
        for line in block.lines() {
            self.comments.push(line.to_string());
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the column count"
        );
        self.rows.push(row);
    }

    /// Renders the full file contents.
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.comments {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                let _ = writeln!(out, "# {line}");
            }
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Writes the rendered report to `path`, creating parent directories.
    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        write_text(path, &self.render())
    }

    /// Parses a report previously produced by [`Report::render`].
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut comments = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if let Some(rest) = line.strip_prefix('#') {
                if columns.is_some() {
                    return Err(ReportError::Malformed {
                        line: line_no,
                        message: "comment after the header row".into(),
                    });
                }
                comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<String> = line.split(',').map(str::to_string).collect();
            match &columns {
                None => columns = Some(cells),
                Some(cols) => {
                    if cells.len() != cols.len() {
                        return Err(ReportError::Malformed {
                            line: line_no,
                            message: format!(
                                "expected {} cells, found {}",
                                cols.len(),
                                cells.len()
                            ),
                        });
                    }
                    rows.push(cells);
                }
            }
        }
        let columns = columns.ok_or(ReportError::Malformed {
            line: 0,
            message: "missing header row".into(),
        })?;
        Ok(Self {
            comments,
            columns,
            rows,
        })
    }

    /// Reads and parses a report file.
    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Parses one column as `f64`, skipping empty cells.
    pub fn f64_column(&self, name: &str) -> Result<Vec<Option<f64>>, ReportError> {
        let idx = self.column_index(name).ok_or(ReportError::Malformed {
            line: 1,
            message: format!("no column named {name}"),
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| parse_opt_f64(&row[idx], r + 2))
            .collect()
    }
}

fn parse_opt_f64(cell: &str, line: usize) -> Result<Option<f64>, ReportError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| ReportError::Malformed {
            line,
            message: format!("cannot parse `{cell}` as a number"),
        })
}

/// Shortest decimal form that parses back to the identical `f64`.
#[must_use]
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Formats an optional value; `None` becomes an empty cell.
#[must_use]
pub fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes text to `path`, creating parent directories first.
pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| ReportError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    let mut file = fs::File::create(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(text.as_bytes()).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
