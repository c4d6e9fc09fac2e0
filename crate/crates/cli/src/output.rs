use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qcm_core::TimeSeries;

/// Writes `contents` next to `path` under a temporary name, then renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// CSV text of a series; a zero-length grid gives the header row alone.
pub fn series_csv(series: &TimeSeries) -> String {
    if series.grid().n_steps() == 0 {
        format!("{}\n", series.csv_header())
    } else {
        series.to_csv()
    }
}

pub fn output_path(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_{suffix}.csv"))
}
