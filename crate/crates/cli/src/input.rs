use std::path::{Path, PathBuf};

use swiftface::image::looks_like_pnm;

use crate::{CliError, CliResult};

/// One image to process: the name written to JSON and where to read it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputImage {
    pub name: String,
    pub path: PathBuf,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "pnm"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Expands `--input` into an ordered image list.
///
/// A directory yields its PPM/PGM/PNM files sorted by name. A file that
/// starts with a PNM magic number is a single image; any other file is a
/// list with one path per line, blank lines and `#` comments ignored.
/// Relative list entries resolve against the list file's directory.
pub fn resolve_inputs(input: &Path) -> CliResult<Vec<InputImage>> {
    let meta = std::fs::metadata(input).map_err(|e| CliError::io(input, e))?;
    let images = if meta.is_dir() {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(input).map_err(|e| CliError::io(input, e))? {
            let path = entry.map_err(|e| CliError::io(input, e))?.path();
            if path.is_file() && has_image_extension(&path) {
                paths.push(path);
            }
        }
        paths.sort();
        paths
            .into_iter()
            .map(|path| InputImage {
                name: path.display().to_string(),
                path,
            })
            .collect()
    } else {
        let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
        if looks_like_pnm(&bytes) {
            vec![InputImage {
                name: input.display().to_string(),
                path: input.to_path_buf(),
            }]
        } else {
            let text = String::from_utf8(bytes).map_err(|_| {
                CliError::Data(format!(
                    "{}: neither a PPM/PGM image nor a text list file",
                    input.display()
                ))
            })?;
            let base = input.parent().unwrap_or(Path::new(""));
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| InputImage {
                    name: l.to_string(),
                    path: base.join(l),
                })
                .collect()
        }
    };
    if images.is_empty() {
        return Err(CliError::Data(format!("{}: no input images", input.display())));
    }
    Ok(images)
}
