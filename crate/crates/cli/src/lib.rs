//! Library side of the `ppa` command-line tool. Each subcommand is a plain
//! function so tests can drive it without spawning a process.

pub mod check;
pub mod config;
pub mod error;
pub mod render;
pub mod sweep;
pub mod train_sweep;

pub use error::{CliError, Result};

/// Parse a comma-separated list, rejecting empty input.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what} grid is empty")));
    }
    items
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("cannot parse {what} value {s:?}")))
        })
        .collect()
}

/// Write `bytes` to `path`, creating parent directories.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_list::<f64>("0, 0.5,1", "p").unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert!(matches!(
            parse_list::<f64>(" , ", "p"),
            Err(CliError::Usage(_))
        ));
        assert!(parse_list::<usize>("4,x", "length").is_err());
    }
}
