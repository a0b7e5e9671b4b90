//! Binary PGM (P5) files and plain-text dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{Domain, Patch};
use crate::error::{Error, Result};

/// Writes an 8-bit P5 file. Header is `P5 <w> <h> 255` followed by one newline.
pub fn write_pgm(path: &Path, p: &Patch) -> Result<()> {
    let mut out = format!("P5 {} {} 255\n", p.width, p.height).into_bytes();
    out.extend(
        p.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_pgm(path: &Path, domain: Domain) -> Result<Patch> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes, path, domain)
}

fn decode_pgm(bytes: &[u8], path: &Path, domain: Domain) -> Result<Patch> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::malformed(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
    }
    if fields[0] != "P5" {
        return Err(Error::malformed(
            path,
            format!("unsupported magic `{}`", fields[0]),
        ));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::malformed(path, format!("bad {what} `{s}`")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::malformed(
            path,
            format!("only 8-bit maxval supported, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::malformed(path, "truncated header"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::malformed(path, "dimensions overflow"))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::malformed(path, format!("expected {n} pixel bytes")))?;
    let scale = maxval as f64;
    Patch::new(
        width,
        height,
        raster
            .iter()
            .map(|&b| (b as f64 / scale).min(1.0))
            .collect(),
        domain,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain: Domain,
}

/// One `<path> <domain>` line per image.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{} {}\n", e.path.display(), e.domain));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, tag) = line.rsplit_once(char::is_whitespace).ok_or_else(|| {
            Error::malformed(
                path,
                format!("line {}: expected `<path> <domain>`", lineno + 1),
            )
        })?;
        let domain = tag
            .parse::<Domain>()
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        let file = PathBuf::from(file.trim());
        let resolved = if file.is_absolute() {
            file
        } else {
            base.join(file)
        };
        entries.push(ManifestEntry {
            path: resolved,
            domain,
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Patch>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| read_pgm(&e.path, e.domain))
        .collect()
}
